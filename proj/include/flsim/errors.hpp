#pragma once

#include <stdexcept>
#include <string>

namespace flsim {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad experiment wiring: mismatched dimensions, rule parameters that cannot
// hold for the given number of updates, missing required pieces.
struct ConfigError : Error {
    using Error::Error;
};

// Bad runtime input: empty datasets, out-of-range labels, malformed arguments.
struct InputError : Error {
    using Error::Error;
};

// A direction-dependent operation received a zero vector.
struct DegenerateDirectionError : InputError {
    using InputError::InputError;
};

// Non-finite value appeared where the contract requires finite results.
struct NumericError : Error {
    using Error::Error;
};

// Malformed file contents (IDX magic, CSV fields, config syntax).
struct FormatError : Error {
    using Error::Error;
};

// Filesystem-level failures.
struct IoError : Error {
    using Error::Error;
};

} // namespace flsim
