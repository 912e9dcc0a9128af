// core.hpp - scalar type selection, error types and small shared helpers.
//
// Compute precision is fixed at compile time: 64-bit by default, 32-bit when
// DPAAT_FLOAT32 is defined before the first include.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dpaat {

#ifdef DPAAT_FLOAT32
using Real = float;
#else
using Real = double;
#endif

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up, reported with the offending node/operand.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Operation called out of order (e.g. backward before forward).
class StateError : public Error {
public:
    using Error::Error;
};

// Precondition of an operation violated by its arguments.
class ContractError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace dpaat
