#pragma once

#include <stdexcept>
#include <string>

namespace mvdet {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public Error {
public:
  using Error::Error;
};

// Malformed text input; carries the 1-based line number when known.
class ParseError : public Error {
public:
  explicit ParseError(const std::string& what, long line = -1)
      : Error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  long line() const { return line_; }

private:
  long line_;
};

class DetectionError : public Error {
public:
  using Error::Error;
};

class GeometryError : public Error {
public:
  using Error::Error;
};

// Requested crop does not intersect the image.
class EmptyCropError : public GeometryError {
public:
  using GeometryError::GeometryError;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

// Non-finite value produced inside the model; identifies the layer and,
// when raised from a training loop, the batch index.
class NumericFault : public Error {
public:
  NumericFault(const std::string& what, std::string where, long batch_index = -1)
      : Error(what + " [at " + where +
              (batch_index >= 0 ? ", batch " + std::to_string(batch_index) : "") + "]"),
        where_(std::move(where)),
        batch_index_(batch_index) {}
  const std::string& where() const { return where_; }
  long batch_index() const { return batch_index_; }

private:
  std::string where_;
  long batch_index_;
};

enum class CheckpointFault { Corrupt, UnsupportedVersion, Incompatible };

class CheckpointError : public Error {
public:
  CheckpointError(CheckpointFault fault, const std::string& what, std::string tensor = "")
      : Error(what + (tensor.empty() ? "" : " (tensor '" + tensor + "')")),
        fault_(fault),
        tensor_(std::move(tensor)) {}
  CheckpointFault fault() const { return fault_; }
  const std::string& tensor() const { return tensor_; }

private:
  CheckpointFault fault_;
  std::string tensor_;
};

}  // namespace mvdet
