#pragma once

#include <stdexcept>
#include <string>

namespace csdnet {

/// Base class for all csdnet errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/map shape disagreement between operands.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid or inconsistent run configuration (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// Missing or malformed input data (CLI exit code 3).
struct DataError : Error {
    using Error::Error;
};

/// Malformed binary file (checkpoint, embedding).
struct FormatError : DataError {
    using DataError::DataError;
};

/// Non-finite value detected during optimization (CLI exit code 4).
struct NumericError : Error {
    using Error::Error;
};

/// CFAR training window degenerated to zero cells.
struct DegenerateWindowError : Error {
    using Error::Error;
};

/// Attention normalization received an all-zero vector.
struct DegenerateAttentionError : Error {
    using Error::Error;
};

} // namespace csdnet
