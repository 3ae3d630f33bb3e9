#include "miivbma/errors.hpp"

namespace miivbma {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::Io: return "io";
        case ErrorCode::Parse: return "parse";
        case ErrorCode::Model: return "model";
        case ErrorCode::Config: return "config";
        case ErrorCode::Identification: return "identification";
        case ErrorCode::Numerical: return "numerical";
    }
    return "unknown";
}

ParseError::ParseError(int line, int column, const std::string& message)
    : Error(ErrorCode::Parse,
            "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
      line_(line),
      column_(column) {}

}  // namespace miivbma
