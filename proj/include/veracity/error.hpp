// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace veracity {

/// Input or configuration that violates a documented precondition or
/// invariant. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Cleaning stripped the input down to nothing.
class DegenerateInputError : public ValidationError {
   public:
    using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
   public:
    using ValidationError::ValidationError;
};

/// A gradient, loss, or parameter became NaN or infinite.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Filesystem or stream failure. The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace veracity
