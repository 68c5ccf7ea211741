#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dncbm {

enum class ErrorKind {
  DimensionMismatch,
  OutOfRange,
  InvalidArgument,
  NonFinite,
  ZeroNorm,
  BadMagic,
  Truncated,
  VersionMismatch,
  TrailingBytes,
  ChecksumMismatch,
  InvalidFile,
  Io,
  InvalidConfig,
};

std::string_view to_string(ErrorKind kind);

// Every failure in the library surfaces as this exception. The kind is stable
// and is what the CLI prints in its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dncbm
