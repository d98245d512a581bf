#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace dqpope::csv {

/// Nine significant digits, '.' separator regardless of locale.
inline std::string format_number(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    std::string out(buf);
    for (char& c : out) {
        if (c == ',') c = '.';
    }
    return out;
}

/// Row-oriented writer. Every row is newline-terminated; the header is written on construction.
class Writer {
public:
    Writer(std::ostream& out, const std::vector<std::string>& header) : out_(out), columns_(header.size()) {
        write_cells(header);
    }

    class Row {
    public:
        explicit Row(Writer& w) : w_(w) {}
        Row& operator<<(double v) { cells_.push_back(format_number(v)); return *this; }
        Row& operator<<(int v) { cells_.push_back(std::to_string(v)); return *this; }
        Row& operator<<(long v) { cells_.push_back(std::to_string(v)); return *this; }
        Row& operator<<(unsigned long v) { cells_.push_back(std::to_string(v)); return *this; }
        Row& operator<<(unsigned long long v) { cells_.push_back(std::to_string(v)); return *this; }
        Row& operator<<(const std::string& v) { cells_.push_back(v); return *this; }
        Row& operator<<(const char* v) { cells_.emplace_back(v); return *this; }
        ~Row() noexcept(false) { w_.write_cells(cells_); }

    private:
        Writer& w_;
        std::vector<std::string> cells_;
    };

    Row row() { return Row(*this); }

private:
    void write_cells(const std::vector<std::string>& cells) {
        if (cells.size() != columns_) {
            throw InternalError("csv row has " + std::to_string(cells.size()) + " cells, expected " +
                                std::to_string(columns_));
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    std::ostream& out_;
    std::size_t columns_;
};

inline std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot open output file " + path.string());
    }
    return out;
}

}  // namespace dqpope::csv
