#pragma once

#include <stdexcept>
#include <string>

namespace l2s {

// Shape / dimension mismatches between tensors.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Violated API preconditions (bad mode, out-of-range layer, empty prompt...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// File and serialization failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace l2s
