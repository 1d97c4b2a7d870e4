#pragma once

#include <stdexcept>
#include <string>

namespace embattack {

// Shape contract violated (mismatched or non-broadcastable operands).
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Token id or row index outside the addressed table.
class IndexError : public std::out_of_range {
 public:
  explicit IndexError(const std::string& what) : std::out_of_range(what) {}
};

// Sequence does not fit in the model's context window.
class LengthError : public std::length_error {
 public:
  explicit LengthError(const std::string& what) : std::length_error(what) {}
};

class ArgumentError : public std::invalid_argument {
 public:
  explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace embattack
