#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "krn/ast.hpp"

namespace krn {

enum class ErrorKind {
  Parse,
  Validation,
  UnknownFunction,
  UnknownParameter,
  NotFeasible,
  NonDifferentiable,
  NotScalarReturn,
  ShapeMismatch,
  OutOfBounds,
  NonFinite,
  InvalidArgument,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct Diagnostic {
  SourceSpan span;
  std::string message;

  friend bool operator==(const Diagnostic& a, const Diagnostic& b) {
    return a.span.begin == b.span.begin && a.span.end == b.span.end && a.message == b.message;
  }
};

std::string format_diagnostic(const Diagnostic& d);

class ParseError : public Error {
 public:
  ParseError(SourceSpan span, std::string message, std::vector<std::string> expected = {});

  SourceSpan span() const { return span_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  SourceSpan span_;
  std::vector<std::string> expected_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Diagnostic> diagnostics);
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

}  // namespace krn
