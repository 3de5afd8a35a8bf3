#include "trajstack/error.hpp"

namespace trajstack {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ParameterDomain: return "parameter_domain";
    case ErrorKind::NumericalRank: return "numerical_rank";
    case ErrorKind::Identifiability: return "identifiability";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::InputValidation: return "input_validation";
    case ErrorKind::EmptyData: return "empty_data";
    case ErrorKind::Data: return "data";
    case ErrorKind::DivisionDomain: return "division_domain";
    case ErrorKind::Parse: return "parse";
  }
  return "unknown";
}

}  // namespace trajstack
