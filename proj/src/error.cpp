#include "streambayes/error.hpp"

namespace streambayes {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Usage: return "UsageError";
    case ErrorCode::Config: return "ConfigError";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Parse: return "ParseError";
    case ErrorCode::Schema: return "SchemaError";
    case ErrorCode::Type: return "TypeError";
    case ErrorCode::Order: return "OrderError";
    case ErrorCode::Structure: return "StructureError";
    case ErrorCode::Validation: return "ValidationError";
    case ErrorCode::MissingValue: return "MissingValue";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::Domain: return "DomainError";
    case ErrorCode::Conjugacy: return "ConjugacyError";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::EmptyModel: return "EmptyModel";
    case ErrorCode::DegenerateEvidence: return "DegenerateEvidence";
    case ErrorCode::Numerical: return "NumericalError";
    case ErrorCode::UndefinedVarianceMean: return "UndefinedVarianceMean";
  }
  return "Error";
}

}  // namespace streambayes
