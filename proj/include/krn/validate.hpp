#pragma once

#include <vector>

#include "krn/ast.hpp"
#include "krn/error.hpp"

namespace krn {

/// Checks the structural and naming rules of the kernel language. Returns an
/// empty list iff the program is well formed.
///
/// Rules beyond name resolution and arity:
///  - views have rank 1 or 2, static extents are >= 1, and a declaration
///    passes one argument per runtime extent;
///  - parallel_for bodies hold only view/scalar assignments, kernel-local
///    scalar declarations and if-statements; outer scalars may be updated
///    from a kernel only through atomic_add;
///  - subscripts are affine (a product needs a constant factor) and may
///    not reference scalars;
///  - if-conditions compare counters, extents and integers only;
///  - scalar parameters are read-only;
///  - a function returning f64 ends with its single return statement.
std::vector<Diagnostic> validate(const Program& program);
std::vector<Diagnostic> validate(const FunctionDef& fn);

/// Throws ValidationError when validate() reports anything.
void require_valid(const Program& program);

}  // namespace krn
