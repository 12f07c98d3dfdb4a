#pragma once

#include <stdexcept>
#include <string>

namespace winq {

// Bad shapes, bad config files, unsupported bit-widths.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid call-site arguments (zero probe, epsilon <= 0, ...).
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf escaped an evaluation, or training diverged.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace winq
