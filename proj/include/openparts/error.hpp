#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace openparts {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller passed an argument that violates a documented precondition.
struct ParamError : Error {
    using Error::Error;
};

// Shapes do not line up.
struct DimError : Error {
    using Error::Error;
};

// Malformed bytes in a serialized file; `offset` points at the problem.
struct DataError : Error {
    uint64_t offset;
    DataError(const std::string& msg, uint64_t off)
        : Error(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};

// Math failure: non-finite value, factorization breakdown, and similar.
struct NumericError : Error {
    using Error::Error;
};

struct UnsupportedOpError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace openparts
