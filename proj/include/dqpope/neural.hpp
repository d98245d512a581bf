#pragma once

// Fully-connected ReLU networks f(s, a, tau) with explicit backpropagation and Adam.
//
// All parameters live in one flat vector; layers are column-major views into it. The layout is
// W_0, b_0, [cosine W_c, b_c], W_1, b_1, ..., W_{L-1}, b_{L-1}.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "random.hpp"

namespace dqpope {

/// How the quantile level enters the network.
enum class TauEmbedding {
    kNone,          // plain state-action network (value, discrete-quantile and categorical heads)
    kConcatScalar,  // tau appended to (state, one-hot action)
    kCosine,        // relu(sum_i cos(i pi tau) h_ij + b_j) multiplied into the first hidden layer
};

inline std::string to_string(TauEmbedding e) {
    switch (e) {
        case TauEmbedding::kNone: return "none";
        case TauEmbedding::kConcatScalar: return "concat-scalar";
        case TauEmbedding::kCosine: return "cosine";
    }
    return "none";
}

inline TauEmbedding tau_embedding_from_string(const std::string& s) {
    if (s == "none") return TauEmbedding::kNone;
    if (s == "concat-scalar") return TauEmbedding::kConcatScalar;
    if (s == "cosine") return TauEmbedding::kCosine;
    throw ConfigError("unknown embedding mode '" + s + "'");
}

/// Parameter initialization schemes.
enum class WeightInit {
    kHeUniform,     // weights U(+-sqrt(6 / fan_in)), zero biases
    kFanInUniform,  // weights and biases U(+-1 / sqrt(fan_in)), the common deep-learning framework default
};

inline std::string to_string(WeightInit w) { return w == WeightInit::kHeUniform ? "he-uniform" : "fan-in-uniform"; }

inline WeightInit weight_init_from_string(const std::string& s) {
    if (s == "he-uniform") return WeightInit::kHeUniform;
    if (s == "fan-in-uniform") return WeightInit::kFanInUniform;
    throw ConfigError("unknown weight initialization '" + s + "'");
}

struct NetArchitecture {
    int state_dim = 1;
    int action_count = 1;
    std::vector<int> hidden{12, 12};
    int output_dim = 1;
    TauEmbedding embedding = TauEmbedding::kConcatScalar;
    int cosine_order = 64;
    std::optional<double> output_clip;

    int input_width() const { return state_dim + action_count + (embedding == TauEmbedding::kConcatScalar ? 1 : 0); }

    /// [input, hidden..., output]
    std::vector<int> layer_widths() const {
        std::vector<int> w{input_width()};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(output_dim);
        return w;
    }

    void validate() const {
        if (state_dim < 1 || action_count < 1 || output_dim < 1) throw ConfigError("network dimensions must be positive");
        for (int h : hidden) {
            if (h < 1) throw ConfigError("hidden widths must be positive");
        }
        if (embedding == TauEmbedding::kCosine && (hidden.empty() || cosine_order < 1)) {
            throw ConfigError("cosine embedding needs a hidden layer and a positive order");
        }
        if (output_clip && !(*output_clip > 0.0)) throw ConfigError("output clip must be positive");
    }

    friend bool operator==(const NetArchitecture&, const NetArchitecture&) = default;
};

/// A batch of network inputs; `taus` is ignored when the embedding is kNone.
struct NetInput {
    Eigen::MatrixXd states;    // state_dim x B
    std::vector<int> actions;  // B
    Eigen::VectorXd taus;      // B

    long size() const { return static_cast<long>(actions.size()); }
};

class QuantileNet {
public:
    using Matrix = Eigen::MatrixXd;
    using Vector = Eigen::VectorXd;
    using MatrixMap = Eigen::Map<Matrix>;
    using ConstMatrixMap = Eigen::Map<const Matrix>;
    using ConstVectorMap = Eigen::Map<const Vector>;

    struct ForwardCache {
        std::vector<Matrix> inputs;  // input activation of each dense layer
        std::vector<Matrix> pre;     // pre-activation of each dense layer
        Matrix hidden0;              // relu(pre[0]), before the cosine product
        Matrix cosines;              // cos(i pi tau), cosine_order x B
        Matrix embed_pre;            // pre-activation of the embedding
        Matrix embed;                // relu(embed_pre)
        Matrix output;               // clipped output
    };

    /// All parameters zero.
    explicit QuantileNet(NetArchitecture arch) : arch_(std::move(arch)) {
        arch_.validate();
        layout();
        params_ = Vector::Zero(count_);
    }

    /// Random initialization; fan-in uniform unless another scheme is requested.
    QuantileNet(NetArchitecture arch, Rng& rng, WeightInit init = WeightInit::kFanInUniform)
        : QuantileNet(std::move(arch)) {
        for (std::size_t l = 0; l < slots_.size(); ++l) {
            init_slot(slots_[l], init, rng);
            if (l == 0 && cosine_) init_slot(*cosine_, init, rng);
        }
    }

    const NetArchitecture& architecture() const noexcept { return arch_; }
    Vector& params() noexcept { return params_; }
    const Vector& params() const noexcept { return params_; }
    long parameter_count() const noexcept { return count_; }
    int layer_count() const noexcept { return static_cast<int>(slots_.size()); }

    MatrixMap weight(int l) { return slot_weight(slots_[l]); }
    Eigen::Map<Vector> bias(int l) { return slot_bias(slots_[l]); }
    ConstMatrixMap weight(int l) const { return slot_weight(slots_[l]); }
    ConstVectorMap bias(int l) const { return slot_bias(slots_[l]); }
    MatrixMap cosine_weight() { return slot_weight(require_cosine()); }
    Eigen::Map<Vector> cosine_bias() { return slot_bias(require_cosine()); }

    ForwardCache forward_cached(const NetInput& in) const {
        const long batch = in.size();
        if (in.states.cols() != batch || in.states.rows() != arch_.state_dim) {
            throw InputError("network input batch has inconsistent shape");
        }
        ForwardCache c;
        c.inputs.reserve(slots_.size());
        c.pre.reserve(slots_.size());
        c.inputs.push_back(encode(in));
        for (std::size_t l = 0; l < slots_.size(); ++l) {
            Matrix z = slot_weight(slots_[l]) * c.inputs[l];
            z.colwise() += slot_bias(slots_[l]);
            c.pre.push_back(std::move(z));
            if (l + 1 == slots_.size()) break;
            Matrix h = c.pre[l].cwiseMax(0.0);
            if (l == 0 && cosine_) {
                c.cosines.resize(arch_.cosine_order, batch);
                for (long j = 0; j < batch; ++j) {
                    for (int i = 0; i < arch_.cosine_order; ++i) {
                        c.cosines(i, j) = std::cos((i + 1) * std::numbers::pi * in.taus(j));
                    }
                }
                c.embed_pre = slot_weight(*cosine_) * c.cosines;
                c.embed_pre.colwise() += slot_bias(*cosine_);
                c.embed = c.embed_pre.cwiseMax(0.0);
                c.hidden0 = h;
                h = h.cwiseProduct(c.embed);
            }
            c.inputs.push_back(std::move(h));
        }
        c.output = c.pre.back();
        if (arch_.output_clip) c.output = c.output.cwiseMax(-*arch_.output_clip).cwiseMin(*arch_.output_clip);
        return c;
    }

    /// output_dim x B.
    Matrix forward(const NetInput& in) const { return forward_cached(in).output; }

    /// Scalar output (head 0) for one (state, action, tau).
    double forward(std::span<const double> state, int action, double tau) const {
        return forward(single(state, action, tau))(0, 0);
    }

    /// All output heads for one (state, action); tau defaults to the median for tau-free nets.
    Vector forward_heads(std::span<const double> state, int action, double tau = 0.5) const {
        return forward(single(state, action, tau)).col(0);
    }

    /// Gradient of sum_{k,j} upstream(k, j) * output(k, j) with respect to every parameter.
    Vector backward(const ForwardCache& c, const Matrix& upstream) const {
        if (upstream.rows() != c.output.rows() || upstream.cols() != c.output.cols()) {
            throw InternalError("upstream gradient shape does not match network output");
        }
        Vector grad = Vector::Zero(count_);
        Matrix delta = upstream;
        if (arch_.output_clip) {
            const double clip = *arch_.output_clip;
            delta = (c.pre.back().array().abs() > clip).select(0.0, delta);
        }
        for (int l = static_cast<int>(slots_.size()) - 1; l >= 0; --l) {
            const Slot& slot = slots_[l];
            Eigen::Map<Matrix>(grad.data() + slot.weight_offset, slot.rows, slot.cols).noalias() =
                delta * c.inputs[l].transpose();
            Eigen::Map<Vector>(grad.data() + slot.bias_offset, slot.rows) = delta.rowwise().sum();
            if (l == 0) break;
            Matrix upstream_act = slot_weight(slot).transpose() * delta;
            if (l == 1 && cosine_) {
                Matrix d_embed_pre =
                    (c.embed_pre.array() > 0.0).select(upstream_act.cwiseProduct(c.hidden0), 0.0);
                Eigen::Map<Matrix>(grad.data() + cosine_->weight_offset, cosine_->rows, cosine_->cols).noalias() =
                    d_embed_pre * c.cosines.transpose();
                Eigen::Map<Vector>(grad.data() + cosine_->bias_offset, cosine_->rows) = d_embed_pre.rowwise().sum();
                upstream_act = upstream_act.cwiseProduct(c.embed);
            }
            delta = (c.pre[l - 1].array() > 0.0).select(upstream_act, 0.0);
        }
        return grad;
    }

    bool all_finite() const { return params_.allFinite(); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["layer_widths"] = arch_.layer_widths();
        j["state_dim"] = arch_.state_dim;
        j["action_count"] = arch_.action_count;
        j["embedding"] = to_string(arch_.embedding);
        j["cosine_order"] = arch_.cosine_order;
        j["output_clip"] = arch_.output_clip ? nlohmann::json(*arch_.output_clip) : nlohmann::json(nullptr);
        j["params"] = std::vector<double>(params_.data(), params_.data() + params_.size());
        return j;
    }

    static QuantileNet from_json(const nlohmann::json& j) {
        NetArchitecture arch;
        const auto widths = j.at("layer_widths").get<std::vector<int>>();
        if (widths.size() < 2) throw InputError("saved network needs at least input and output widths");
        arch.state_dim = j.at("state_dim").get<int>();
        arch.action_count = j.at("action_count").get<int>();
        arch.embedding = tau_embedding_from_string(j.at("embedding").get<std::string>());
        arch.cosine_order = j.at("cosine_order").get<int>();
        if (!j.at("output_clip").is_null()) arch.output_clip = j.at("output_clip").get<double>();
        arch.hidden.assign(widths.begin() + 1, widths.end() - 1);
        arch.output_dim = widths.back();
        if (arch.input_width() != widths.front()) throw InputError("saved network input width is inconsistent");
        QuantileNet net(arch);
        const auto params = j.at("params").get<std::vector<double>>();
        if (static_cast<long>(params.size()) != net.parameter_count()) {
            throw InputError("saved parameter count does not match the architecture");
        }
        net.params_ = Eigen::Map<const Vector>(params.data(), static_cast<long>(params.size()));
        return net;
    }

    NetInput single(std::span<const double> state, int action, double tau) const {
        NetInput in;
        in.states = Eigen::Map<const Vector>(state.data(), static_cast<long>(state.size()));
        in.actions = {action};
        in.taus = Vector::Constant(1, tau);
        return in;
    }

private:
    struct Slot {
        long rows = 0, cols = 0, weight_offset = 0, bias_offset = 0;
    };

    void layout() {
        const auto widths = arch_.layer_widths();
        long offset = 0;
        auto add = [&](long rows, long cols) {
            Slot s{rows, cols, offset, offset + rows * cols};
            offset += rows * cols + rows;
            return s;
        };
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            slots_.push_back(add(widths[l + 1], widths[l]));
            if (l == 0 && arch_.embedding == TauEmbedding::kCosine) {
                cosine_ = add(widths[1], arch_.cosine_order);
            }
        }
        count_ = offset;
    }

    void init_slot(const Slot& s, WeightInit init, Rng& rng) {
        const double fan_in = static_cast<double>(s.cols);
        const double bound = init == WeightInit::kHeUniform ? std::sqrt(6.0 / fan_in) : 1.0 / std::sqrt(fan_in);
        for (long i = 0; i < s.rows * s.cols; ++i) {
            params_(s.weight_offset + i) = bound * (2.0 * uniform_open(rng) - 1.0);
        }
        if (init == WeightInit::kFanInUniform) {
            for (long i = 0; i < s.rows; ++i) params_(s.bias_offset + i) = bound * (2.0 * uniform_open(rng) - 1.0);
        }
    }

    const Slot& require_cosine() const {
        if (!cosine_) throw InternalError("network has no cosine embedding");
        return *cosine_;
    }

    MatrixMap slot_weight(const Slot& s) { return MatrixMap(params_.data() + s.weight_offset, s.rows, s.cols); }
    Eigen::Map<Vector> slot_bias(const Slot& s) { return Eigen::Map<Vector>(params_.data() + s.bias_offset, s.rows); }
    ConstMatrixMap slot_weight(const Slot& s) const {
        return ConstMatrixMap(params_.data() + s.weight_offset, s.rows, s.cols);
    }
    ConstVectorMap slot_bias(const Slot& s) const { return ConstVectorMap(params_.data() + s.bias_offset, s.rows); }

    Matrix encode(const NetInput& in) const {
        const long batch = in.size();
        Matrix x = Matrix::Zero(arch_.input_width(), batch);
        x.topRows(arch_.state_dim) = in.states;
        const bool uses_tau = arch_.embedding != TauEmbedding::kNone;
        if (uses_tau && in.taus.size() != batch) throw InputError("quantile levels missing from network input");
        for (long j = 0; j < batch; ++j) {
            const int a = in.actions[j];
            if (a < 0 || a >= arch_.action_count) throw InputError("action id out of range");
            x(arch_.state_dim + a, j) = 1.0;
            if (uses_tau) {
                const double tau = in.taus(j);
                if (!(tau > 0.0 && tau < 1.0)) throw InputError("quantile level must lie in (0, 1)");
                if (arch_.embedding == TauEmbedding::kConcatScalar) x(arch_.input_width() - 1, j) = tau;
            }
        }
        return x;
    }

    NetArchitecture arch_;
    std::vector<Slot> slots_;
    std::optional<Slot> cosine_;
    long count_ = 0;
    Vector params_;
};

/// Adam moments and hyperparameters for one flat parameter vector.
struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState(long n, double lr) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)), learning_rate(lr) {}
};

/// Bias-corrected Adam update of `params` in place.
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& opt) {
    if (params.size() != grads.size() || opt.m.size() != params.size() || opt.v.size() != params.size()) {
        throw InternalError("Adam state, gradient and parameter shapes differ");
    }
    ++opt.step;
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grads;
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    params.array() -= opt.learning_rate * (opt.m.array() / c1) / ((opt.v.array() / c2).sqrt() + opt.epsilon);
}

inline void adam_step(QuantileNet& net, const Eigen::VectorXd& grads, AdamState& opt) {
    adam_step(net.params(), grads, opt);
}

/// target <- (1 - rho) * target + rho * online.
inline void soft_update(QuantileNet& target, const QuantileNet& online, double rho) {
    if (!(target.architecture() == online.architecture())) {
        throw InternalError("soft update between networks of different architecture");
    }
    if (!(rho >= 0.0 && rho <= 1.0)) throw InputError("soft update rate must lie in [0, 1]");
    if (rho == 1.0) {
        target.params() = online.params();
    } else if (rho > 0.0) {
        target.params() = (1.0 - rho) * target.params() + rho * online.params();
    }
}

}  // namespace dqpope
