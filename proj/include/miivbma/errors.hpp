#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace miivbma {

/// Failure category. The CLI maps each category to an exit code.
enum class ErrorCode {
    Io,              ///< unreadable file, malformed CSV
    Parse,           ///< model-syntax error
    Model,           ///< structurally invalid model (unknown variable, duplicate edge, ...)
    Config,          ///< invalid options or simulation configuration
    Identification,  ///< an equation has too few model-implied instruments
    Numerical,       ///< singular design, non-positive-definite covariance, ...
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

class ParseError : public Error {
public:
    ParseError(int line, int column, const std::string& message);

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

class IdentificationError : public Error {
public:
    IdentificationError(std::string equation, const std::string& message)
        : Error(ErrorCode::Identification, message), equation_(std::move(equation)) {}

    const std::string& equation() const noexcept { return equation_; }

private:
    std::string equation_;
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& message)
        : Error(ErrorCode::Numerical, message) {}
};

}  // namespace miivbma
