#pragma once

#include <stdexcept>
#include <string>

namespace sonact {

/// Invalid user-facing configuration (CLI exit code 2).
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent file on disk (WAV, manifest, checkpoint).
class format_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure during training (NaN gradients, NaN loss).
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace sonact
