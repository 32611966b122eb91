#include "krn/error.hpp"

#include <sstream>

namespace krn {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::UnknownFunction: return "unknown function";
    case ErrorKind::UnknownParameter: return "unknown parameter";
    case ErrorKind::NotFeasible: return "not feasible";
    case ErrorKind::NonDifferentiable: return "non-differentiable operation";
    case ErrorKind::NotScalarReturn: return "function does not return a scalar";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::OutOfBounds: return "out of bounds";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

std::string format_diagnostic(const Diagnostic& d) {
  std::ostringstream os;
  os << d.span.line << ":" << d.span.column << ": " << d.message;
  return os.str();
}

namespace {

std::string parse_message(SourceSpan span, const std::string& message,
                          const std::vector<std::string>& expected) {
  std::ostringstream os;
  os << span.line << ":" << span.column << ": " << message;
  if (!expected.empty()) {
    os << " (expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) os << (i ? ", " : "") << expected[i];
    os << ")";
  }
  return os.str();
}

std::string validation_message(const std::vector<Diagnostic>& ds) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ds.size(); ++i) os << (i ? "\n" : "") << format_diagnostic(ds[i]);
  return os.str();
}

}  // namespace

ParseError::ParseError(SourceSpan span, std::string message, std::vector<std::string> expected)
    : Error(ErrorKind::Parse, parse_message(span, message, expected)),
      span_(span),
      expected_(std::move(expected)) {}

ValidationError::ValidationError(std::vector<Diagnostic> diagnostics)
    : Error(ErrorKind::Validation, validation_message(diagnostics)),
      diagnostics_(std::move(diagnostics)) {}

}  // namespace krn
