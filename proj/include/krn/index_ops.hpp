#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "krn/ast.hpp"

namespace krn {

/// Loop-counter names appearing in `e`, including those inside indirect
/// subscripts such as `idx(i)`.
std::set<std::string> free_counters(const Index& e);

/// Canonical affine form: constant + sum of coeff * term. Terms are counters,
/// extents, indirect reads (keyed by their normalized text) and, for products
/// of two non-constant operands, the normalized product text.
struct AffineForm {
  std::int64_t constant = 0;
  std::map<std::string, std::int64_t> terms;

  friend bool operator==(const AffineForm&, const AffineForm&) = default;
};

AffineForm normalize(const Index& e);
std::string canonical_key(const AffineForm& f);

/// Equality modulo commutativity/associativity of the affine operations
/// (`j + 1` and `1 + j` compare equal).
bool equivalent(const Index& a, const Index& b);
bool equivalent(const std::vector<Index>& a, const std::vector<Index>& b);

}  // namespace krn
