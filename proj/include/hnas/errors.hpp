#pragma once

#include <stdexcept>
#include <string>

namespace hnas {

// Tensor shapes or layer configurations that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Violated preconditions of an operation (non-scalar loss, bad resolution, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A NaN or infinity showed up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Values outside a mathematical domain (e.g. nonpositive FLOPs in a reward).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed input files; `offset` is the byte position where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Well-formed input whose content is unusable (empty dataset, unknown label).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration: unknown key, malformed or out-of-range value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Block construction that exceeds a configured resource cap.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// A token sequence that does not describe a genome; `position` is the index
// of the first offending token.
class DecodeError : public std::out_of_range {
 public:
  DecodeError(const std::string& what, std::size_t position)
      : std::out_of_range(what + " (token position " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace hnas
