#pragma once

#include <stdexcept>
#include <string>

namespace stabid {

// Raised when a numerical routine cannot produce a trustworthy result
// (non-convergence, loss of positive definiteness, overflow).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised for malformed user input (files, flags, configuration).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace stabid
