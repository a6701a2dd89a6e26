#pragma once

#include <stdexcept>
#include <string>

namespace lwfs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (dataset, checkpoint, partition).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint parse failures carry a kind so callers can tell them apart.
class CheckpointError : public FormatError {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kShapeMismatch, kBadHeader };

  CheckpointError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace lwfs
