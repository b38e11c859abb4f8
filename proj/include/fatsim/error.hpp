#pragma once

#include <stdexcept>
#include <string>

namespace fatsim {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor/vector dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// NaN or Inf reached a loss, gradient or update.
struct NumericError : Error {
    using Error::Error;
};

// Invalid configuration or argument value.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset files missing or malformed.
struct DatasetError : Error {
    using Error::Error;
};

// A rule's precondition on (n, f) does not hold.
struct AggregationError : Error {
    using Error::Error;
};

}  // namespace fatsim
