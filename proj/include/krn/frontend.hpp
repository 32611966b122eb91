#pragma once

#include <string>
#include <string_view>

#include "krn/ast.hpp"
#include "krn/error.hpp"

namespace krn {

/// Parses `.krn` source into a validated Program. Throws ParseError on
/// malformed text and ValidationError when the program parses but breaks a
/// language rule.
Program parse(std::string_view text);

/// Parses without running validate(); used to inspect diagnostics directly.
Program parse_unvalidated(std::string_view text);

/// Canonical source text. parse(emit(p)) == p for every valid p, and emit is
/// byte-for-byte deterministic.
std::string emit(const Program& program);
std::string emit(const FunctionDef& fn);
std::string emit(const Stmt& stmt, int indent = 0);

std::string to_source(const Expr& e);
std::string to_source(const Index& e);
std::string to_source(const ViewAccess& a);
std::string to_source(const ViewType& t);

/// Shortest text that parses back to exactly `v`.
std::string format_number(double v);

}  // namespace krn
