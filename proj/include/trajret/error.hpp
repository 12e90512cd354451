#pragma once

#include <stdexcept>
#include <string>

namespace trajret {

// Base of every error raised by the library. `module()` names the owning
// component so the CLI can print a single machine-parseable line.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string module, const std::string& field, const std::string& what)
      : Error(std::move(module), "invalid " + field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class LeakageError : public Error {
 public:
  LeakageError(const std::string& subject_id, const std::string& where)
      : Error("eval", "leakage: test subject " + subject_id + " reached " + where),
        subject_id_(subject_id) {}
  const std::string& subject_id() const noexcept { return subject_id_; }

 private:
  std::string subject_id_;
};

class ProviderError : public Error {
 public:
  explicit ProviderError(const std::string& what) : Error("oracle", what) {}
};

}  // namespace trajret
