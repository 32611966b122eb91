#pragma once

// Abstract syntax of the kernel language. Nodes are immutable and shared by
// reference; copying an Expr/Index/Stmt copies a pointer. Structural equality
// (operator==) ignores source spans.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace krn {

struct SourceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  int line = 0;
  int column = 0;
};

struct IndexNode;
struct ExprNode;
struct StmtNode;

/// Integer-valued subscript expression (affine over loop counters and
/// extents, plus indirect view reads).
class Index {
 public:
  Index();
  template <class Alt>
  Index(Alt alt, SourceSpan span = {});

  const IndexNode& node() const { return *node_; }
  SourceSpan span() const;
  template <class T>
  const T* get() const;

  friend bool operator==(const Index& a, const Index& b);

 private:
  std::shared_ptr<const IndexNode> node_;
};

/// Real-valued expression.
class Expr {
 public:
  Expr();
  template <class Alt>
  Expr(Alt alt, SourceSpan span = {});

  const ExprNode& node() const { return *node_; }
  SourceSpan span() const;
  template <class T>
  const T* get() const;

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  std::shared_ptr<const ExprNode> node_;
};

class Stmt {
 public:
  template <class Alt>
  Stmt(Alt alt, SourceSpan span = {});

  const StmtNode& node() const { return *node_; }
  SourceSpan span() const;
  template <class T>
  const T* get() const;

  friend bool operator==(const Stmt& a, const Stmt& b);

 private:
  std::shared_ptr<const StmtNode> node_;
};

// ---------------------------------------------------------------------------
// Shared leaves

struct Counter {
  std::string name;
  friend bool operator==(const Counter&, const Counter&) = default;
};

struct Extent {
  std::string view;
  int dim = 0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

struct ViewAccess {
  std::string view;
  std::vector<Index> indices;
  friend bool operator==(const ViewAccess&, const ViewAccess&) = default;
};

// ---------------------------------------------------------------------------
// Index alternatives

struct IntLiteral {
  std::int64_t value = 0;
  friend bool operator==(const IntLiteral&, const IntLiteral&) = default;
};

enum class IndexOp { Add, Sub, Mul };

struct IndexBinary {
  IndexOp op = IndexOp::Add;
  Index lhs;
  Index rhs;
  friend bool operator==(const IndexBinary&, const IndexBinary&) = default;
};

using IndexVariant = std::variant<Counter, IntLiteral, Extent, IndexBinary, ViewAccess>;

struct IndexNode {
  IndexVariant value;
  SourceSpan span;
};

// ---------------------------------------------------------------------------
// Expr alternatives

struct Literal {
  double value = 0.0;
  friend bool operator==(const Literal&, const Literal&) = default;
};

struct ScalarRef {
  std::string name;
  friend bool operator==(const ScalarRef&, const ScalarRef&) = default;
};

enum class BinaryOp { Add, Sub, Mul, Div };

struct Binary {
  BinaryOp op = BinaryOp::Add;
  Expr lhs;
  Expr rhs;
  friend bool operator==(const Binary&, const Binary&) = default;
};

struct Negate {
  Expr operand;
  friend bool operator==(const Negate&, const Negate&) = default;
};

using ExprVariant = std::variant<Literal, ScalarRef, Counter, ViewAccess, Extent, Binary, Negate>;

struct ExprNode {
  ExprVariant value;
  SourceSpan span;
};

// ---------------------------------------------------------------------------
// Types

/// Rank and per-dimension extents; std::nullopt marks a runtime extent.
struct ViewType {
  int rank = 1;
  std::vector<std::optional<std::int64_t>> extents;

  static ViewType dynamic(int rank) {
    return ViewType{rank, std::vector<std::optional<std::int64_t>>(static_cast<std::size_t>(rank))};
  }
  int dynamic_count() const;
  friend bool operator==(const ViewType&, const ViewType&) = default;
};

// ---------------------------------------------------------------------------
// Statements

enum class AssignOp { Set, Add, Sub };
enum class CmpOp { Ne, Eq, Lt, Gt, Le, Ge };

struct DeclView {
  std::string name;
  ViewType type;
  std::string label;
  std::vector<Index> dynamic_extents;
  friend bool operator==(const DeclView&, const DeclView&) = default;
};

struct DeclScalar {
  std::string name;
  std::optional<Expr> init;
  friend bool operator==(const DeclScalar&, const DeclScalar&) = default;
};

/// `v(i...) op= value`. With `atomic`, op is Add and the update is
/// linearizable (`atomic_add(v(i...), value)`).
struct AssignView {
  ViewAccess target;
  AssignOp op = AssignOp::Set;
  Expr value;
  bool atomic = false;
  friend bool operator==(const AssignView&, const AssignView&) = default;
};

struct AssignScalar {
  std::string name;
  AssignOp op = AssignOp::Set;
  Expr value;
  bool atomic = false;
  friend bool operator==(const AssignScalar&, const AssignScalar&) = default;
};

struct Condition {
  Index lhs;
  CmpOp op = CmpOp::Ne;
  Index rhs;
  friend bool operator==(const Condition&, const Condition&) = default;
};

struct If {
  Condition cond;
  std::vector<Stmt> body;
  friend bool operator==(const If&, const If&) = default;
};

/// `parallel_for counter in 0..upper { body }`
struct ParallelFor {
  std::string counter;
  Index upper;
  std::vector<Stmt> body;
  friend bool operator==(const ParallelFor&, const ParallelFor&) = default;
};

/// `deep_copy(dst, src_view)` or `deep_copy(dst, fill_value)`.
struct DeepCopy {
  std::string dst;
  std::variant<std::string, Expr> source;
  friend bool operator==(const DeepCopy&, const DeepCopy&) = default;
};

/// `scalar = parallel_sum(view)`: gather-reduce. Declares `scalar` when it is
/// not yet in scope.
struct ParallelSum {
  std::string scalar;
  std::string view;
  friend bool operator==(const ParallelSum&, const ParallelSum&) = default;
};

/// `parallel_sum(view, source)`: elementwise accumulate from another view of
/// the same shape, or broadcast-accumulate a scalar expression.
struct ParallelAccumulate {
  std::string view;
  std::variant<std::string, Expr> source;
  friend bool operator==(const ParallelAccumulate&, const ParallelAccumulate&) = default;
};

struct Return {
  Expr value;
  friend bool operator==(const Return&, const Return&) = default;
};

using StmtVariant = std::variant<DeclView, DeclScalar, AssignView, AssignScalar, If, ParallelFor,
                                 DeepCopy, ParallelSum, ParallelAccumulate, Return>;

struct StmtNode {
  StmtVariant value;
  SourceSpan span;
};

// ---------------------------------------------------------------------------

struct Param {
  std::string name;
  std::optional<ViewType> view;  // scalar f64 when empty
  SourceSpan span;

  bool is_view() const { return view.has_value(); }
  friend bool operator==(const Param& a, const Param& b) { return a.name == b.name && a.view == b.view; }
};

struct FunctionDef {
  std::string name;
  std::vector<Param> params;
  std::vector<Stmt> body;
  bool returns_scalar = false;
  SourceSpan span;

  const Param* find_param(const std::string& n) const;
  friend bool operator==(const FunctionDef& a, const FunctionDef& b) {
    return a.name == b.name && a.params == b.params && a.body == b.body &&
           a.returns_scalar == b.returns_scalar;
  }
};

struct Program {
  std::vector<FunctionDef> functions;

  const FunctionDef* find(const std::string& name) const;
  friend bool operator==(const Program&, const Program&) = default;
};

// ---------------------------------------------------------------------------
// Template definitions

template <class Alt>
Index::Index(Alt alt, SourceSpan span)
    : node_(std::make_shared<const IndexNode>(IndexNode{IndexVariant(std::move(alt)), span})) {}

template <class T>
const T* Index::get() const {
  return std::get_if<T>(&node_->value);
}

template <class Alt>
Expr::Expr(Alt alt, SourceSpan span)
    : node_(std::make_shared<const ExprNode>(ExprNode{ExprVariant(std::move(alt)), span})) {}

template <class T>
const T* Expr::get() const {
  return std::get_if<T>(&node_->value);
}

template <class Alt>
Stmt::Stmt(Alt alt, SourceSpan span)
    : node_(std::make_shared<const StmtNode>(StmtNode{StmtVariant(std::move(alt)), span})) {}

template <class T>
const T* Stmt::get() const {
  return std::get_if<T>(&node_->value);
}

// ---------------------------------------------------------------------------
// Construction shorthands used by the transformer and tests.

namespace build {

inline Index counter(std::string name) { return Index(Counter{std::move(name)}); }
inline Index integer(std::int64_t v) { return Index(IntLiteral{v}); }
inline Index extent_index(std::string view, int dim) { return Index(Extent{std::move(view), dim}); }
inline Index index_add(Index a, Index b) { return Index(IndexBinary{IndexOp::Add, std::move(a), std::move(b)}); }
inline Index index_sub(Index a, Index b) { return Index(IndexBinary{IndexOp::Sub, std::move(a), std::move(b)}); }

inline Expr lit(double v) { return Expr(Literal{v}); }
inline Expr scalar(std::string name) { return Expr(ScalarRef{std::move(name)}); }
inline Expr access(std::string view, std::vector<Index> indices) {
  return Expr(ViewAccess{std::move(view), std::move(indices)});
}
inline Expr add(Expr a, Expr b) { return Expr(Binary{BinaryOp::Add, std::move(a), std::move(b)}); }
inline Expr sub(Expr a, Expr b) { return Expr(Binary{BinaryOp::Sub, std::move(a), std::move(b)}); }
inline Expr mul(Expr a, Expr b) { return Expr(Binary{BinaryOp::Mul, std::move(a), std::move(b)}); }
inline Expr div(Expr a, Expr b) { return Expr(Binary{BinaryOp::Div, std::move(a), std::move(b)}); }
inline Expr neg(Expr a) { return Expr(Negate{std::move(a)}); }

}  // namespace build

// ---------------------------------------------------------------------------
// Traversal helpers

/// Calls `f(const Stmt&)` on every statement in pre-order, descending into
/// If and ParallelFor bodies.
template <class F>
void walk_statements(const std::vector<Stmt>& body, F&& f) {
  for (const Stmt& s : body) {
    f(s);
    if (const auto* i = s.get<If>()) walk_statements(i->body, f);
    if (const auto* k = s.get<ParallelFor>()) walk_statements(k->body, f);
  }
}

/// Every ViewAccess reachable from `e`, including those nested in subscripts.
/// `value_position` is false for accesses that appear inside an index.
template <class F>
void for_each_access(const Expr& e, F&& f);
template <class F>
void for_each_access(const Index& e, F&& f);

template <class F>
void for_each_access(const Index& e, F&& f) {
  if (const auto* b = e.get<IndexBinary>()) {
    for_each_access(b->lhs, f);
    for_each_access(b->rhs, f);
  } else if (const auto* a = e.get<ViewAccess>()) {
    f(*a, false);
    for (const Index& i : a->indices) for_each_access(i, f);
  }
}

template <class F>
void for_each_access(const Expr& e, F&& f) {
  if (const auto* b = e.get<Binary>()) {
    for_each_access(b->lhs, f);
    for_each_access(b->rhs, f);
  } else if (const auto* n = e.get<Negate>()) {
    for_each_access(n->operand, f);
  } else if (const auto* a = e.get<ViewAccess>()) {
    f(*a, true);
    for (const Index& i : a->indices) for_each_access(i, f);
  }
}

/// Names of scalars read by `e` (value positions only; subscripts cannot
/// reference scalars).
void collect_scalar_reads(const Expr& e, std::vector<std::string>& out);

/// Views referenced anywhere in `e`, in value or index position.
void collect_views(const Expr& e, std::vector<std::string>& out);
void collect_views(const Index& e, std::vector<std::string>& out);

/// Number of ParallelFor statements in `body` (pre-order, nested included).
int count_kernels(const std::vector<Stmt>& body);

}  // namespace krn
