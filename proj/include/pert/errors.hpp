#pragma once

#include <stdexcept>
#include <string>

namespace pert {

/// Shape mismatch between tensors. Messages name both shapes.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Non-finite values where finite math is required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (bad method/dim combination, unknown keys, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse (non-scalar loss to backward, empty metric input, ...).
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Token id outside the vocabulary.
class VocabError : public std::runtime_error {
 public:
  explicit VocabError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File parse/read/write failures. Messages carry line numbers where known.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pert
