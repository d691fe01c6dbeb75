#pragma once

#include <stdexcept>
#include <string>

namespace s2p {

// Error categories map onto CLI exit codes: usage=1, data=2, numeric=3.
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// A referenced file or directory does not exist.
class MissingFileError : public Error {
 public:
  explicit MissingFileError(const std::string& m) : Error(ErrorKind::data, m) {}
};

// A stored artifact declares a format, version, or kind this build does not accept.
class VersionMismatchError : public Error {
 public:
  explicit VersionMismatchError(const std::string& m) : Error(ErrorKind::data, m) {}
};

// Stored bytes fail structural validation (bad magic, truncation, shape mismatch).
class CorruptDataError : public Error {
 public:
  explicit CorruptDataError(const std::string& m) : Error(ErrorKind::data, m) {}
};

// Extractor weights referenced by a spec are not available.
class WeightsMissingError : public Error {
 public:
  explicit WeightsMissingError(const std::string& m) : Error(ErrorKind::data, m) {}
};

// Reading or writing a file failed for reasons other than absence.
class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorKind::data, m) {}
};

// Caller violated an operation precondition.
class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& m) : Error(ErrorKind::usage, m) {}
};

// Non-finite values appeared where finite ones are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

// Training produced a non-finite loss and was aborted.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

}  // namespace s2p
