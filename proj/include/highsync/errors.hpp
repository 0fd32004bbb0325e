#pragma once

#include <stdexcept>
#include <string>

namespace highsync {

// Error categories surfaced by the library. The CLI maps these onto exit codes.

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Input data that is well-formed but unusable (degenerate crops, bad clips).
struct InvalidInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DecodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigurationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required artifact (checkpoint, dataset) is missing or inconsistent.
struct PreconditionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace highsync
