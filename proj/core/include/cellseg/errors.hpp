#pragma once

#include <stdexcept>
#include <string>

namespace cellseg {

// Shape or extent disagreement between arrays.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced where finite values are required, or divergent training.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad key, value or combination in a run configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable, inconsistent or malformed input data (files, masks, manifests).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace cellseg
