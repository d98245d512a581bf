#pragma once

#include <stdexcept>
#include <string>

namespace dqpope {

/// Invalid experiment, environment or estimator configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed arguments that violate an operation's precondition.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation would exceed a configured resource cap.
class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Broken internal contract (shape mismatch between nets, optimizer state, ...).
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Importance ratio undefined because the behavior policy gives zero probability to a logged action.
class DegenerateRatioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite or exploding loss.
class TrainingDivergedError : public std::runtime_error {
public:
    TrainingDivergedError(const std::string& what, long step, double loss)
        : std::runtime_error(what + " (step " + std::to_string(step) + ", loss " + std::to_string(loss) + ")"),
          step_(step),
          loss_(loss) {}

    long step() const noexcept { return step_; }
    double loss() const noexcept { return loss_; }

private:
    long step_;
    double loss_;
};

}  // namespace dqpope
