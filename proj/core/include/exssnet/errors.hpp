#pragma once

#include <stdexcept>
#include <string>

namespace exssnet {

// Shapes of two tensors/masks do not compose (matmul, elementwise ops, ...).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numeric guard tripped: non-finite values where finite ones are required,
// or an operation that would produce them (e.g. log of an empty softmax).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An object was used before it was put into the required state
// (e.g. reading an accuracy cell that was never filled).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A serialized artifact (IDX file, checkpoint, config file) is malformed.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The underlying stream/file could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace exssnet
