#pragma once

#include <stdexcept>
#include <string>

namespace tvb {

// Base class for everything this library throws on contract violations.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or length mismatch between containers.
struct DimensionError : Error {
    using Error::Error;
};

// Mode index outside 1..d.
struct ModeError : Error {
    using Error::Error;
};

// Requested rank exceeds what the operator factor supports.
struct RankError : Error {
    using Error::Error;
};

// Factorization failure or non-finite intermediate value.
struct NumericalError : Error {
    using Error::Error;
};

// Problem too large for a dense-covariance solver.
struct CapacityError : Error {
    using Error::Error;
};

// A parameter-selection criterion is degenerate (flat or undefined).
struct SelectionError : Error {
    using Error::Error;
};

// Mathematically invalid input (e.g. zero-norm reference signal).
struct DomainError : Error {
    using Error::Error;
};

// File or stream failure.
struct IoError : Error {
    using Error::Error;
};

// Bad configuration or command line; maps to exit code 2.
struct UsageError : Error {
    using Error::Error;
};

} // namespace tvb
