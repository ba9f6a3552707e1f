#pragma once

#include <stdexcept>
#include <string>

namespace saem {

/// Base class for all library errors. `kind()` is a short machine-readable tag
/// used by the command-line front end.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& what) : Error("schema", what) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

struct ModelError : Error {
  explicit ModelError(const std::string& what) : Error("model", what) {}
};

struct UnsupportedError : Error {
  explicit UnsupportedError(const std::string& what) : Error("unsupported", what) {}
};

struct InitializationError : Error {
  explicit InitializationError(const std::string& what) : Error("initialization", what) {}
};

struct DesignError : Error {
  explicit DesignError(const std::string& what) : Error("design", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace saem
