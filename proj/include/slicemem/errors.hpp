#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace slicemem {

/// Base of every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what) : Error("evaluation", what) {}
};

/// Malformed file content. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error("format", what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class TruncationError : public FormatError {
 public:
  TruncationError(const std::string& what, std::uint64_t offset) : FormatError(what, offset) {}
};

class VersionError : public Error {
 public:
  explicit VersionError(std::uint32_t version)
      : Error("version", "unsupported checkpoint version " + std::to_string(version)),
        version_(version) {}

  std::uint32_t version() const noexcept { return version_; }

 private:
  std::uint32_t version_;
};

}  // namespace slicemem
