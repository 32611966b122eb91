#pragma once

#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "krn/ast.hpp"

namespace krn {

// ---------------------------------------------------------------------------
// Activity

struct ActivityResult {
  std::set<std::string> views;
  std::set<std::string> scalars;
  std::unordered_map<const StmtNode*, bool> statements;

  bool view_active(const std::string& name) const { return views.count(name) != 0; }
  bool scalar_active(const std::string& name) const { return scalars.count(name) != 0; }
  bool active(const Stmt& s) const;
};

/// Forward data-flow closure from `wrt`. Subscripts, extents and loop
/// counters never carry activity. Throws Error(UnknownParameter) when `wrt`
/// names something that is not a parameter of `fn`.
ActivityResult activity(const FunctionDef& fn, const std::set<std::string>& wrt);

/// True when `e` reads an active view or scalar in value position.
bool depends_on_active(const Expr& e, const ActivityResult& act);

// ---------------------------------------------------------------------------
// Race analysis

enum class RaceRule {
  IndirectIndex = 1,   // subscript contains a view access: v(idx(i))
  DistinctIndices = 2, // several different subscripts that use the counter
  CounterFree = 3,     // subscript independent of the counter, or an outer scalar
};

struct RaceFlag {
  int kernel = 0;  // 1-based, pre-order over parallel_for statements
  std::string name;
  RaceRule rule = RaceRule::IndirectIndex;
  bool scalar = false;
  std::vector<std::vector<Index>> subscripts;  // distinct subscripts seen
};

struct RaceResult {
  std::vector<RaceFlag> flags;

  bool flagged(int kernel, const std::string& name) const;
  std::set<std::string> flagged_in(int kernel) const;
};

RaceResult race_analysis(const FunctionDef& fn);

/// One line per flag: `kernel#<k> view=<name> rule=<r> indices=[...]`.
std::string format_race_report(const RaceResult& result);

// ---------------------------------------------------------------------------
// Taping feasibility

struct TapingViolation {
  SourceSpan statement;
  std::string name;
  SourceSpan overwrite;
  std::string reason;
};

struct TapingVerdict {
  bool ok = true;
  std::vector<TapingViolation> violations;
};

/// The reverse pass reads primal values after the whole forward pass has
/// run, so every value an adjoint statement needs must still hold its
/// forward-time content at that point. Reports each needed view or scalar
/// that is overwritten by the statement itself or by anything that runs
/// after it, and each kernel-local temporary an adjoint would need.
TapingVerdict taping_feasibility(const FunctionDef& fn, const ActivityResult& act);

/// Names (views and scalars) whose primal values appear in the partial
/// derivatives of `e` with respect to its active operands.
std::set<std::string> partial_references(const Expr& e, const ActivityResult& act);

}  // namespace krn
