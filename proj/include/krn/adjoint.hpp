#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "krn/analysis.hpp"
#include "krn/ast.hpp"

namespace krn {

struct DiffOptions {
  double seed = 1.0;  // initial adjoint of the returned value
};

struct GradientPlan {
  std::string gradient;                          // `<fn>_grad`
  std::map<std::string, std::string> shadows;    // active entity -> `_d_<name>`
  std::vector<std::string> shadow_params;        // appended parameters, in order
  std::map<int, int> kernel_pairs;               // primal kernel id -> reverse kernel id in the gradient
  std::set<std::pair<int, std::string>> atomic;  // (primal kernel, entity) updated atomically in reverse
  std::string seed_target;                       // shadow of the returned scalar, empty for expressions
  ActivityResult activity;
  RaceResult races;
};

struct DiffResult {
  Program program;  // input program with `<fn>_grad` appended
  GradientPlan plan;
  std::vector<std::string> warnings;
};

/// Builds `<fn>_grad`: shadow declarations, the forward pass verbatim, the
/// seed, then the reverse pass. Shadow parameters accumulate; callers zero
/// them for a plain gradient.
///
/// Throws Error with kind UnknownFunction, UnknownParameter, NotScalarReturn,
/// NotFeasible, or InvalidArgument (generated names collide with the input).
DiffResult differentiate(const Program& program, const std::string& fn, const std::set<std::string>& wrt,
                         const DiffOptions& options = {});

std::string shadow_name(const std::string& name);
std::string gradient_name(const std::string& fn);

/// `L += e` / `L -= e` as `L = L + e` / `L = L - e`. Other statements are
/// returned unchanged.
Stmt desugar(const Stmt& s);

// ---------------------------------------------------------------------------
// Individual reversal rules. Exposed for testing; differentiate() drives them.

class NameSource {
 public:
  explicit NameSource(std::set<std::string> taken) : taken_(std::move(taken)) {}
  std::string fresh(const std::string& base);
  std::string temp();  // `_r_d<N>`
  void reserve(const std::string& name) { taken_.insert(name); }

 private:
  std::set<std::string> taken_;
  int next_temp_ = 0;
};

/// Per-call lookups filled by differentiate(); optional for direct calls.
struct ReverseBook {
  std::map<const StmtNode*, int> kernel_ids;  // primal kernel ids, 1-based pre-order
  std::set<const StmtNode*> reset_sums;       // parallel_sum whose scalar adjoint is reset after the broadcast
  std::vector<std::pair<int, const StmtNode*>> reverse_kernels;
};

struct ReverseContext {
  const FunctionDef* fn = nullptr;
  ReverseBook* book = nullptr;
  GradientPlan* plan = nullptr;
  NameSource* names = nullptr;
  int kernel = 0;                 // primal kernel being reversed, 0 outside kernels
  std::set<std::string> locals;   // kernel-local scalars of that kernel
};

/// Reverse of an assignment or initialized scalar declaration:
/// `let r = shadow(L); shadow(L) -= r;` then one accumulation per active
/// operand. Atomic updates (`atomic_add`) leave shadow(L) in place.
std::vector<Stmt> reverse_statement(const Stmt& s, ReverseContext& ctx);

/// Same counter and range; body is the reversed statements with guards kept.
Stmt reverse_parallel_for(const Stmt& kernel, ReverseContext& ctx);

std::vector<Stmt> reverse_deep_copy(const DeepCopy& copy, ReverseContext& ctx);

/// Broadcast of the scalar's adjoint into the source view's shadow. When
/// `zero_scalar` is set the scalar's shadow is reset afterwards.
std::vector<Stmt> reverse_parallel_sum(const ParallelSum& sum, ReverseContext& ctx, bool zero_scalar);

/// Emits `shadow(o) += ∂e/∂o * adjoint` for every active operand of `e`.
void propagate(const Expr& e, const Expr& adjoint, ReverseContext& ctx, std::vector<Stmt>& out);

/// Test helper: turns `atomic_add` on the listed entities inside `fn` into
/// plain `+=` updates.
Program strip_atomics(const Program& program, const std::string& fn, const std::set<std::string>& names);

}  // namespace krn
