#include "krn/validate.hpp"

#include <map>
#include <set>
#include <string>

#include "krn/index_ops.hpp"

namespace krn {

namespace {

enum class SymbolKind { View, Scalar, Counter };

struct Symbol {
  SymbolKind kind;
  int rank = 0;
  bool param = false;
  bool kernel_local = false;
};

class Validator {
 public:
  std::vector<Diagnostic> run(const FunctionDef& fn) {
    scopes_.clear();
    scopes_.emplace_back();
    std::set<std::string> seen;
    for (const Param& p : fn.params) {
      if (!seen.insert(p.name).second) report(p.span, "duplicate parameter '" + p.name + "'");
      if (p.view) {
        check_view_type(*p.view, p.span);
        declare(p.name, Symbol{SymbolKind::View, p.view->rank, true, false}, p.span);
      } else {
        declare(p.name, Symbol{SymbolKind::Scalar, 0, true, false}, p.span);
      }
    }

    for (std::size_t i = 0; i < fn.body.size(); ++i) {
      const Stmt& s = fn.body[i];
      if (s.get<Return>()) {
        if (!fn.returns_scalar)
          report(s.span(), "return in a function without a result type");
        else if (i + 1 != fn.body.size())
          report(s.span(), "return must be the final statement");
      }
      statement(s, Context{false, true});
    }
    if (fn.returns_scalar && (fn.body.empty() || !fn.body.back().get<Return>()))
      report(fn.span, "function '" + fn.name + "' must end with a return statement");
    return std::move(diags_);
  }

 private:
  struct Context {
    bool in_kernel = false;
    bool top_level = false;
  };

  std::vector<std::map<std::string, Symbol>> scopes_;
  std::vector<Diagnostic> diags_;
  std::size_t kernel_scope_ = 0;  // first scope index belonging to the current kernel

  void report(SourceSpan span, std::string msg) { diags_.push_back({span, std::move(msg)}); }

  const Symbol* lookup(const std::string& name) const {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      auto f = it->find(name);
      if (f != it->end()) return &f->second;
    }
    return nullptr;
  }

  bool local_to_kernel(const std::string& name) const {
    for (std::size_t i = scopes_.size(); i-- > kernel_scope_;)
      if (scopes_[i].count(name)) return true;
    return false;
  }

  void declare(const std::string& name, Symbol sym, SourceSpan span) {
    if (lookup(name)) {
      report(span, "'" + name + "' is already declared in an enclosing scope");
      return;
    }
    scopes_.back().emplace(name, sym);
  }

  void check_view_type(const ViewType& t, SourceSpan span) {
    if (t.rank != 1 && t.rank != 2) report(span, "view rank must be 1 or 2");
    if (static_cast<int>(t.extents.size()) != t.rank)
      report(span, "view type lists " + std::to_string(t.extents.size()) + " extents for rank " +
                       std::to_string(t.rank));
    for (const auto& e : t.extents)
      if (e && *e < 1) report(span, "static extent must be at least 1");
  }

  const Symbol* require_view(const std::string& name, SourceSpan span) {
    const Symbol* s = lookup(name);
    if (!s) {
      report(span, "unknown view '" + name + "'");
      return nullptr;
    }
    if (s->kind != SymbolKind::View) {
      report(span, "'" + name + "' is not a view");
      return nullptr;
    }
    return s;
  }

  void access(const ViewAccess& a, SourceSpan span, const Context& ctx) {
    if (const Symbol* s = require_view(a.view, span)) {
      if (static_cast<int>(a.indices.size()) != s->rank)
        report(span, "view '" + a.view + "' has rank " + std::to_string(s->rank) + " but is accessed with " +
                         std::to_string(a.indices.size()) + " indices");
    }
    for (const Index& i : a.indices) index(i, ctx);
  }

  void extent(const Extent& x, SourceSpan span) {
    if (const Symbol* s = require_view(x.view, span)) {
      if (x.dim < 0 || x.dim >= s->rank)
        report(span, "extent dimension " + std::to_string(x.dim) + " out of range for '" + x.view + "'");
    }
  }

  void index(const Index& e, const Context& ctx) {
    SourceSpan span = e.span();
    if (const auto* c = e.get<Counter>()) {
      const Symbol* s = lookup(c->name);
      if (!s)
        report(span, "unknown identifier '" + c->name + "'");
      else if (s->kind != SymbolKind::Counter)
        report(span, "'" + c->name + "' is not a loop counter; subscripts cannot depend on scalar values");
    } else if (const auto* x = e.get<Extent>()) {
      extent(*x, span);
    } else if (const auto* a = e.get<ViewAccess>()) {
      access(*a, span, ctx);
    } else if (const auto* b = e.get<IndexBinary>()) {
      index(b->lhs, ctx);
      index(b->rhs, ctx);
      if (b->op == IndexOp::Mul && !normalize(b->lhs).terms.empty() && !normalize(b->rhs).terms.empty())
        report(span, "non-affine subscript: a product needs a constant factor");
    }
  }

  void expr(const Expr& e, const Context& ctx) {
    SourceSpan span = e.span();
    if (const auto* s = e.get<ScalarRef>()) {
      const Symbol* sym = lookup(s->name);
      if (!sym)
        report(span, "unknown identifier '" + s->name + "'");
      else if (sym->kind == SymbolKind::View)
        report(span, "view '" + s->name + "' used as a scalar");
    } else if (const auto* c = e.get<Counter>()) {
      const Symbol* sym = lookup(c->name);
      if (!sym || sym->kind != SymbolKind::Counter) report(span, "'" + c->name + "' is not a loop counter in scope");
    } else if (const auto* a = e.get<ViewAccess>()) {
      access(*a, span, ctx);
    } else if (const auto* x = e.get<Extent>()) {
      extent(*x, span);
    } else if (const auto* b = e.get<Binary>()) {
      expr(b->lhs, ctx);
      expr(b->rhs, ctx);
    } else if (const auto* n = e.get<Negate>()) {
      expr(n->operand, ctx);
    }
  }

  void block(const std::vector<Stmt>& body, const Context& ctx) {
    scopes_.emplace_back();
    for (const Stmt& s : body) statement(s, ctx);
    scopes_.pop_back();
  }

  void not_in_kernel(const char* what, SourceSpan span, const Context& ctx) {
    if (ctx.in_kernel) report(span, std::string(what) + " is not allowed inside parallel_for");
  }

  void statement(const Stmt& s, const Context& ctx) {
    SourceSpan span = s.span();
    std::visit(
        [&](const auto& st) {
          using T = std::decay_t<decltype(st)>;
          if constexpr (std::is_same_v<T, DeclView>) {
            not_in_kernel("view declaration", span, ctx);
            if (!ctx.in_kernel && !ctx.top_level) report(span, "views must be declared at function scope");
            check_view_type(st.type, span);
            if (static_cast<int>(st.dynamic_extents.size()) != st.type.dynamic_count())
              report(span, "view '" + st.name + "' needs " + std::to_string(st.type.dynamic_count()) +
                               " runtime extents, got " + std::to_string(st.dynamic_extents.size()));
            for (const Index& i : st.dynamic_extents) index(i, ctx);
            declare(st.name, Symbol{SymbolKind::View, st.type.rank, false, false}, span);
          } else if constexpr (std::is_same_v<T, DeclScalar>) {
            if (st.init) expr(*st.init, ctx);
            declare(st.name, Symbol{SymbolKind::Scalar, 0, false, ctx.in_kernel}, span);
          } else if constexpr (std::is_same_v<T, AssignView>) {
            access(st.target, span, ctx);
            expr(st.value, ctx);
            if (st.atomic && st.op != AssignOp::Add) report(span, "atomic update must be an addition");
          } else if constexpr (std::is_same_v<T, AssignScalar>) {
            const Symbol* sym = lookup(st.name);
            if (!sym) {
              report(span, "unknown identifier '" + st.name + "'");
            } else if (sym->kind != SymbolKind::Scalar) {
              report(span, "'" + st.name + "' is not a scalar");
            } else {
              if (sym->param) report(span, "scalar parameter '" + st.name + "' is read-only");
              if (ctx.in_kernel && !st.atomic && !local_to_kernel(st.name))
                report(span, "kernel writes outer scalar '" + st.name + "' without atomic_add");
            }
            expr(st.value, ctx);
            if (st.atomic && st.op != AssignOp::Add) report(span, "atomic update must be an addition");
          } else if constexpr (std::is_same_v<T, If>) {
            index(st.cond.lhs, ctx);
            index(st.cond.rhs, ctx);
            std::vector<std::string> views;
            for_each_access(st.cond.lhs, [&](const ViewAccess& a, bool) { views.push_back(a.view); });
            for_each_access(st.cond.rhs, [&](const ViewAccess& a, bool) { views.push_back(a.view); });
            if (!views.empty())
              report(span, "active condition unsupported: condition reads view '" + views.front() + "'");
            block(st.body, Context{ctx.in_kernel, false});
          } else if constexpr (std::is_same_v<T, ParallelFor>) {
            index(st.upper, ctx);
            if (ctx.in_kernel) {
              report(span, "nested parallel_for is not supported");
              return;
            }
            scopes_.emplace_back();
            std::size_t saved = kernel_scope_;
            kernel_scope_ = scopes_.size() - 1;
            declare(st.counter, Symbol{SymbolKind::Counter, 0, false, true}, span);
            for (const Stmt& inner : st.body) statement(inner, Context{true, false});
            kernel_scope_ = saved;
            scopes_.pop_back();
          } else if constexpr (std::is_same_v<T, DeepCopy>) {
            not_in_kernel("deep_copy", span, ctx);
            const Symbol* dst = require_view(st.dst, span);
            if (const auto* src = std::get_if<std::string>(&st.source)) {
              const Symbol* s2 = require_view(*src, span);
              if (dst && s2 && dst->rank != s2->rank) report(span, "deep_copy between views of different rank");
              if (*src == st.dst) report(span, "deep_copy source and destination are the same view");
            } else {
              expr(std::get<Expr>(st.source), ctx);
            }
          } else if constexpr (std::is_same_v<T, ParallelSum>) {
            not_in_kernel("parallel_sum", span, ctx);
            require_view(st.view, span);
            if (const Symbol* sym = lookup(st.scalar)) {
              if (sym->kind != SymbolKind::Scalar)
                report(span, "'" + st.scalar + "' is not a scalar");
              else if (sym->param)
                report(span, "scalar parameter '" + st.scalar + "' is read-only");
            } else {
              scopes_.back().emplace(st.scalar, Symbol{SymbolKind::Scalar, 0, false, false});
            }
          } else if constexpr (std::is_same_v<T, ParallelAccumulate>) {
            not_in_kernel("parallel_sum", span, ctx);
            const Symbol* dst = require_view(st.view, span);
            if (const auto* src = std::get_if<std::string>(&st.source)) {
              const Symbol* s2 = require_view(*src, span);
              if (dst && s2 && dst->rank != s2->rank) report(span, "parallel_sum between views of different rank");
              if (*src == st.view) report(span, "parallel_sum source and destination are the same view");
            } else {
              expr(std::get<Expr>(st.source), ctx);
            }
          } else if constexpr (std::is_same_v<T, Return>) {
            not_in_kernel("return", span, ctx);
            if (!ctx.top_level && !ctx.in_kernel) report(span, "return must be the final top-level statement");
            expr(st.value, ctx);
          }
        },
        s.node().value);
  }
};

}  // namespace

std::vector<Diagnostic> validate(const FunctionDef& fn) { return Validator{}.run(fn); }

std::vector<Diagnostic> validate(const Program& program) {
  std::vector<Diagnostic> out;
  std::set<std::string> names;
  for (const FunctionDef& fn : program.functions) {
    if (!names.insert(fn.name).second) out.push_back({fn.span, "duplicate function '" + fn.name + "'"});
    auto ds = validate(fn);
    out.insert(out.end(), ds.begin(), ds.end());
  }
  return out;
}

void require_valid(const Program& program) {
  auto ds = validate(program);
  if (!ds.empty()) throw ValidationError(std::move(ds));
}

}  // namespace krn
