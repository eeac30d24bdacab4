#pragma once

#include <stdexcept>
#include <string>

namespace echochain {

/// A limit guard (memory or dense-size) would be exceeded.
class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical routine failed to reach its tolerance.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data failed a validation check (e.g. a matrix that should be unitary is not).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace echochain
