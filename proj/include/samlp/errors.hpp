#pragma once

#include <stdexcept>

namespace samlp {

/// Configuration or dimension mismatch between inputs and the model.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Caller-supplied value outside its documented domain.
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Training or evaluation produced a non-finite value.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace samlp
