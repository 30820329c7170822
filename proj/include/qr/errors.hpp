#pragma once

#include <stdexcept>
#include <string>

namespace qr {

// Malformed or inconsistent experiment configuration (CLI exit code 2).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf, overflow, or non-convergence during computation (CLI exit code 3).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated an operation contract (CLI exit code 4).
struct precondition_error : std::invalid_argument {
    explicit precondition_error(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace qr
