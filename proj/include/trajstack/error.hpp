#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trajstack {

enum class ErrorKind {
  ParameterDomain,
  NumericalRank,
  Identifiability,
  Configuration,
  InputValidation,
  EmptyData,
  Data,
  DivisionDomain,
  Parse,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library. `module` and `operation` name where it
/// happened so the CLI can serialize the error without string parsing.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, std::string operation, const std::string& message)
      : std::runtime_error(message),
        kind_(kind),
        module_(std::move(module)),
        operation_(std::move(operation)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }
  const std::string& operation() const noexcept { return operation_; }

 private:
  ErrorKind kind_;
  std::string module_;
  std::string operation_;
};

}  // namespace trajstack
