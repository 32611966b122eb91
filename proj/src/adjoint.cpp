#include "krn/adjoint.hpp"

#include <algorithm>

#include "krn/error.hpp"
#include "krn/frontend.hpp"

namespace krn {

using namespace build;

std::string shadow_name(const std::string& name) { return "_d_" + name; }
std::string gradient_name(const std::string& fn) { return fn + "_grad"; }

std::string NameSource::fresh(const std::string& base) {
  std::string name = base;
  for (int k = 1; taken_.count(name); ++k) name = base + std::to_string(k);
  taken_.insert(name);
  return name;
}

std::string NameSource::temp() {
  std::string name;
  do {
    name = "_r_d" + std::to_string(next_temp_++);
  } while (taken_.count(name));
  taken_.insert(name);
  return name;
}

Stmt desugar(const Stmt& s) {
  if (const auto* a = s.get<AssignView>(); a && !a->atomic && a->op != AssignOp::Set) {
    Expr old(a->target);
    Expr value = a->op == AssignOp::Add ? add(old, a->value) : sub(old, a->value);
    return Stmt(AssignView{a->target, AssignOp::Set, value, false}, s.span());
  }
  if (const auto* a = s.get<AssignScalar>(); a && !a->atomic && a->op != AssignOp::Set) {
    Expr old = scalar(a->name);
    Expr value = a->op == AssignOp::Add ? add(old, a->value) : sub(old, a->value);
    return Stmt(AssignScalar{a->name, AssignOp::Set, value, false}, s.span());
  }
  return s;
}

namespace {

const ActivityResult& act(const ReverseContext& ctx) { return ctx.plan->activity; }

bool active_entity(const ReverseContext& ctx, const std::string& name) {
  return act(ctx).view_active(name) || act(ctx).scalar_active(name);
}

Expr negated(const Expr& e) {
  if (const auto* l = e.get<Literal>()) return lit(-l->value);
  if (const auto* n = e.get<Negate>()) return n->operand;
  return neg(e);
}

bool is_scalar_param(const ReverseContext& ctx, const std::string& name) {
  const Param* p = ctx.fn->find_param(name);
  return p && !p->is_view();
}

// Where an entity's adjoint lives: an element of a shadow view, or a scalar.
struct Target {
  std::optional<ViewAccess> element;
  std::string scalar;
  std::string primal;
};

Target view_target(const ViewAccess& a) {
  return Target{ViewAccess{shadow_name(a.view), a.indices}, "", a.view};
}

Target scalar_target(const ReverseContext& ctx, const std::string& name) {
  if (is_scalar_param(ctx, name)) return Target{ViewAccess{shadow_name(name), {integer(0)}}, "", name};
  return Target{std::nullopt, shadow_name(name), name};
}

Expr value_of(const Target& t) { return t.element ? Expr(*t.element) : scalar(t.scalar); }

bool atomic_for(const ReverseContext& ctx, const Target& t) {
  if (ctx.kernel == 0) return false;
  if (!t.element && ctx.locals.count(t.primal)) return false;
  return ctx.plan->atomic.count({ctx.kernel, t.primal}) != 0;
}

Stmt accumulate(const ReverseContext& ctx, const Target& t, Expr value) {
  bool atomic = atomic_for(ctx, t);
  if (t.element) return Stmt(AssignView{*t.element, AssignOp::Add, std::move(value), atomic});
  return Stmt(AssignScalar{t.scalar, AssignOp::Add, std::move(value), atomic});
}

Stmt subtract(const ReverseContext& ctx, const Target& t, const Expr& value) {
  if (atomic_for(ctx, t)) return accumulate(ctx, t, negated(value));
  if (t.element) return Stmt(AssignView{*t.element, AssignOp::Sub, value, false});
  return Stmt(AssignScalar{t.scalar, AssignOp::Sub, value, false});
}

int view_rank(const FunctionDef& fn, const std::string& name) {
  if (const Param* p = fn.find_param(name); p && p->view) return p->view->rank;
  int rank = 1;
  walk_statements(fn.body, [&](const Stmt& s) {
    if (const auto* d = s.get<DeclView>(); d && d->name == name) rank = d->type.rank;
  });
  return rank;
}

std::vector<Stmt> reverse_block(const std::vector<Stmt>& body, ReverseContext& ctx);

std::vector<Stmt> reverse_accumulate(const ParallelAccumulate& acc, ReverseContext& ctx) {
  std::vector<Stmt> out;
  if (!act(ctx).view_active(acc.view)) return out;
  const std::string shadow = shadow_name(acc.view);
  if (const auto* src = std::get_if<std::string>(&acc.source)) {
    if (act(ctx).view_active(*src)) out.emplace_back(ParallelAccumulate{shadow_name(*src), shadow});
  } else if (depends_on_active(std::get<Expr>(acc.source), act(ctx))) {
    std::string r = ctx.names->temp();
    out.emplace_back(ParallelSum{r, shadow});
    propagate(std::get<Expr>(acc.source), scalar(r), ctx, out);
  }
  return out;
}

std::vector<Stmt> reverse_one(const Stmt& s, ReverseContext& ctx) {
  if (s.get<AssignView>() || s.get<AssignScalar>() || s.get<DeclScalar>()) return reverse_statement(s, ctx);
  if (const auto* i = s.get<If>()) {
    auto body = reverse_block(i->body, ctx);
    if (body.empty()) return {};
    return {Stmt(If{i->cond, std::move(body)})};
  }
  if (s.get<ParallelFor>()) return {reverse_parallel_for(s, ctx)};
  if (const auto* c = s.get<DeepCopy>()) return reverse_deep_copy(*c, ctx);
  if (const auto* p = s.get<ParallelSum>()) {
    bool reset = ctx.book && ctx.book->reset_sums.count(&s.node());
    return reverse_parallel_sum(*p, ctx, reset);
  }
  if (const auto* a = s.get<ParallelAccumulate>()) return reverse_accumulate(*a, ctx);
  return {};
}

std::vector<Stmt> reverse_block(const std::vector<Stmt>& body, ReverseContext& ctx) {
  std::vector<Stmt> out;
  for (auto it = body.rbegin(); it != body.rend(); ++it) {
    auto part = reverse_one(*it, ctx);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace

void propagate(const Expr& e, const Expr& adjoint, ReverseContext& ctx, std::vector<Stmt>& out) {
  if (!depends_on_active(e, act(ctx))) return;
  if (const auto* s = e.get<ScalarRef>()) {
    out.push_back(accumulate(ctx, scalar_target(ctx, s->name), adjoint));
  } else if (const auto* a = e.get<ViewAccess>()) {
    out.push_back(accumulate(ctx, view_target(*a), adjoint));
  } else if (const auto* n = e.get<Negate>()) {
    propagate(n->operand, negated(adjoint), ctx, out);
  } else if (const auto* b = e.get<Binary>()) {
    switch (b->op) {
      case BinaryOp::Add:
        propagate(b->lhs, adjoint, ctx, out);
        propagate(b->rhs, adjoint, ctx, out);
        break;
      case BinaryOp::Sub:
        propagate(b->lhs, adjoint, ctx, out);
        propagate(b->rhs, negated(adjoint), ctx, out);
        break;
      case BinaryOp::Mul:
        propagate(b->lhs, mul(adjoint, b->rhs), ctx, out);
        propagate(b->rhs, mul(b->lhs, adjoint), ctx, out);
        break;
      case BinaryOp::Div:
        propagate(b->lhs, div(adjoint, b->rhs), ctx, out);
        propagate(b->rhs, div(neg(mul(adjoint, b->lhs)), mul(b->rhs, b->rhs)), ctx, out);
        break;
    }
  }
}

std::vector<Stmt> reverse_statement(const Stmt& stmt, ReverseContext& ctx) {
  Stmt s = desugar(stmt);
  std::optional<Target> lhs;
  Expr value;
  bool keep_adjoint = false;  // `atomic_add` leaves the target's adjoint untouched
  if (const auto* a = s.get<AssignView>()) {
    lhs = view_target(a->target);
    value = a->value;
    keep_adjoint = a->atomic;
  } else if (const auto* a = s.get<AssignScalar>()) {
    lhs = scalar_target(ctx, a->name);
    value = a->value;
    keep_adjoint = a->atomic;
  } else if (const auto* d = s.get<DeclScalar>(); d && d->init) {
    lhs = scalar_target(ctx, d->name);
    value = *d->init;
  }
  if (!lhs || !active_entity(ctx, lhs->primal)) return {};

  std::vector<Stmt> out;
  std::string r = ctx.names->temp();
  out.emplace_back(DeclScalar{r, value_of(*lhs)});
  if (!keep_adjoint) out.push_back(subtract(ctx, *lhs, scalar(r)));
  propagate(value, scalar(r), ctx, out);
  return out;
}

Stmt reverse_parallel_for(const Stmt& kernel, ReverseContext& ctx) {
  const auto& pf = *kernel.get<ParallelFor>();
  ReverseContext inner = ctx;
  inner.kernel = 0;
  if (ctx.book) {
    auto it = ctx.book->kernel_ids.find(&kernel.node());
    if (it != ctx.book->kernel_ids.end()) inner.kernel = it->second;
  }
  inner.locals.clear();
  std::vector<Stmt> body;
  std::set<std::string> declared;
  walk_statements(pf.body, [&](const Stmt& s) {
    if (const auto* d = s.get<DeclScalar>()) {
      inner.locals.insert(d->name);
      if (act(ctx).scalar_active(d->name) && declared.insert(d->name).second)
        body.emplace_back(DeclScalar{shadow_name(d->name), lit(0)});
    }
  });
  auto rev = reverse_block(pf.body, inner);
  body.insert(body.end(), rev.begin(), rev.end());
  Stmt out(ParallelFor{pf.counter, pf.upper, std::move(body)});
  if (ctx.book) ctx.book->reverse_kernels.emplace_back(inner.kernel, &out.node());
  return out;
}

std::vector<Stmt> reverse_deep_copy(const DeepCopy& copy, ReverseContext& ctx) {
  std::vector<Stmt> out;
  if (!act(ctx).view_active(copy.dst)) return out;
  const std::string dst = shadow_name(copy.dst);
  if (const auto* src = std::get_if<std::string>(&copy.source)) {
    if (act(ctx).view_active(*src)) {
      if (view_rank(*ctx.fn, copy.dst) == 1) {
        std::string i = ctx.names->fresh("i");
        Stmt update(AssignView{ViewAccess{shadow_name(*src), {counter(i)}}, AssignOp::Add,
                               access(dst, {counter(i)}), false});
        out.emplace_back(ParallelFor{i, extent_index(copy.dst, 0), {update}});
      } else {
        out.emplace_back(ParallelAccumulate{shadow_name(*src), dst});
      }
    }
  } else if (depends_on_active(std::get<Expr>(copy.source), act(ctx))) {
    std::string r = ctx.names->temp();
    out.emplace_back(ParallelSum{r, dst});
    propagate(std::get<Expr>(copy.source), scalar(r), ctx, out);
  }
  out.emplace_back(DeepCopy{dst, lit(0)});
  return out;
}

std::vector<Stmt> reverse_parallel_sum(const ParallelSum& sum, ReverseContext& ctx, bool zero_scalar) {
  std::vector<Stmt> out;
  if (!act(ctx).scalar_active(sum.scalar)) return out;
  Target t = scalar_target(ctx, sum.scalar);
  if (act(ctx).view_active(sum.view)) out.emplace_back(ParallelAccumulate{shadow_name(sum.view), value_of(t)});
  if (zero_scalar) out.emplace_back(AssignScalar{t.scalar, AssignOp::Set, lit(0), false});
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::set<std::string> identifiers(const FunctionDef& fn) {
  std::set<std::string> out;
  for (const Param& p : fn.params) out.insert(p.name);
  walk_statements(fn.body, [&](const Stmt& s) {
    if (const auto* d = s.get<DeclView>()) out.insert(d->name);
    if (const auto* d = s.get<DeclScalar>()) out.insert(d->name);
    if (const auto* k = s.get<ParallelFor>()) out.insert(k->counter);
    if (const auto* p = s.get<ParallelSum>()) out.insert(p->scalar);
  });
  return out;
}

std::string written_name(const Stmt& s) {
  if (const auto* a = s.get<AssignView>()) return a->target.view;
  if (const auto* a = s.get<AssignScalar>()) return a->name;
  if (const auto* d = s.get<DeclScalar>()) return d->init ? d->name : std::string();
  if (const auto* c = s.get<DeepCopy>()) return c->dst;
  if (const auto* p = s.get<ParallelSum>()) return p->scalar;
  if (const auto* p = s.get<ParallelAccumulate>()) return p->view;
  return {};
}

std::vector<Index> extent_args(const std::string& view, const ViewType& type) {
  std::vector<Index> out;
  for (std::size_t d = 0; d < type.extents.size(); ++d)
    if (!type.extents[d]) out.push_back(extent_index(view, static_cast<int>(d)));
  return out;
}

// Shadow declarations can move to the top when their sizes only depend on
// parameter extents.
bool hoistable(const DeclView& d, const FunctionDef& fn) {
  for (const Index& e : d.dynamic_extents) {
    bool reads = false;
    for_each_access(e, [&](const ViewAccess&, bool) { reads = true; });
    if (reads) return false;
    std::vector<std::string> views;
    collect_views(e, views);
    for (const std::string& v : views)
      if (!fn.find_param(v)) return false;
  }
  return true;
}

std::string join(const std::set<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

}  // namespace

DiffResult differentiate(const Program& program, const std::string& fn_name, const std::set<std::string>& wrt,
                         const DiffOptions& options) {
  const FunctionDef* fn = program.find(fn_name);
  if (!fn) throw Error(ErrorKind::UnknownFunction, "unknown function '" + fn_name + "'");
  if (!fn->returns_scalar || fn->body.empty() || !fn->body.back().get<Return>())
    throw Error(ErrorKind::NotScalarReturn, "function '" + fn_name + "' does not return a scalar");
  const std::string grad = gradient_name(fn_name);
  if (program.find(grad)) throw Error(ErrorKind::InvalidArgument, "program already defines '" + grad + "'");

  DiffResult result;
  GradientPlan& plan = result.plan;
  plan.gradient = grad;
  plan.activity = activity(*fn, wrt);
  plan.races = race_analysis(*fn);
  const ActivityResult& A = plan.activity;

  TapingVerdict taping = taping_feasibility(*fn, A);
  if (!taping.ok) {
    std::vector<Diagnostic> diags;
    for (const auto& v : taping.violations) diags.push_back({v.statement, v.reason});
    std::string msg = "cannot differentiate '" + fn_name + "': values needed by the reverse pass are overwritten";
    for (const auto& d : diags) msg += "\n  " + format_diagnostic(d);
    throw Error(ErrorKind::NotFeasible, msg);
  }

  std::set<std::string> taken = identifiers(*fn);
  for (const std::string& n : A.views) plan.shadows[n] = shadow_name(n);
  for (const std::string& n : A.scalars) plan.shadows[n] = shadow_name(n);
  for (const auto& [primal, shadow] : plan.shadows)
    if (taken.count(shadow))
      throw Error(ErrorKind::InvalidArgument,
                  "identifier '" + shadow + "' collides with the adjoint of '" + primal + "'");
  for (const auto& [primal, shadow] : plan.shadows) taken.insert(shadow);
  for (const RaceFlag& f : plan.races.flags)
    if (plan.shadows.count(f.name)) plan.atomic.insert({f.kernel, f.name});

  NameSource names(taken);
  ReverseBook extra;
  int k = 0;
  walk_statements(fn->body, [&](const Stmt& s) {
    if (s.get<ParallelFor>()) extra.kernel_ids[&s.node()] = ++k;
  });
  {
    std::set<std::string> written;
    walk_statements(fn->body, [&](const Stmt& s) {
      if (const auto* p = s.get<ParallelSum>(); p && written.count(p->scalar)) extra.reset_sums.insert(&s.node());
      std::string w = written_name(s);
      if (!w.empty() && A.active(s)) written.insert(w);
    });
  }

  FunctionDef out;
  out.name = grad;
  out.returns_scalar = false;
  out.params = fn->params;
  for (const Param& p : fn->params) {
    if (!plan.shadows.count(p.name)) continue;
    ViewType t = p.view ? *p.view : ViewType{1, {std::int64_t{1}}};
    out.params.push_back(Param{shadow_name(p.name), t, {}});
    plan.shadow_params.push_back(shadow_name(p.name));
  }

  std::vector<Stmt>& body = out.body;
  // Incoming adjoints are set aside so the reverse pass starts from zero and
  // the caller's values are added back in one step at the end. Overwritten
  // parameters need this for correctness; for the rest it keeps repeated
  // calls exactly additive.
  std::vector<std::pair<std::string, std::string>> stashed;
  for (const Param& p : fn->params) {
    if (!plan.shadows.count(p.name)) continue;
    std::string shadow = shadow_name(p.name);
    std::string saved = names.fresh("_saved" + shadow);
    if (p.view)
      body.emplace_back(DeclView{saved, *p.view, saved, extent_args(p.name, *p.view)});
    else
      body.emplace_back(DeclView{saved, ViewType{1, {std::int64_t{1}}}, saved, {}});
    body.emplace_back(DeepCopy{saved, shadow});
    body.emplace_back(DeepCopy{shadow, lit(0)});
    stashed.emplace_back(shadow, saved);
  }

  std::set<std::string> kernel_locals;
  walk_statements(fn->body, [&](const Stmt& s) {
    if (const auto* pf = s.get<ParallelFor>())
      walk_statements(pf->body, [&](const Stmt& t) {
        if (const auto* d = t.get<DeclScalar>()) kernel_locals.insert(d->name);
      });
  });
  for (const std::string& n : A.scalars)
    if (!fn->find_param(n) && !kernel_locals.count(n)) body.emplace_back(DeclScalar{shadow_name(n), lit(0)});

  auto shadow_decl = [&](const DeclView& d) {
    std::string s = shadow_name(d.name);
    return Stmt(DeclView{s, d.type, s, d.dynamic_extents});
  };
  for (const Stmt& s : fn->body)
    if (const auto* d = s.get<DeclView>(); d && A.view_active(d->name) && hoistable(*d, *fn))
      body.push_back(shadow_decl(*d));

  std::vector<Stmt> forward(fn->body.begin(), fn->body.end() - 1);
  for (const Stmt& s : forward) {
    if (const auto* d = s.get<DeclView>(); d && A.view_active(d->name) && !hoistable(*d, *fn))
      body.push_back(shadow_decl(*d));
    body.push_back(s);
  }

  const Return& ret = *fn->body.back().get<Return>();
  if (!depends_on_active(ret.value, A)) {
    result.warnings.push_back("return value of '" + fn_name + "' does not depend on {" + join(wrt) +
                              "}; the gradient is identically zero");
    // Keep the side effects of the primal; there is nothing to propagate.
    for (const auto& [shadow, saved] : stashed) body.emplace_back(ParallelAccumulate{shadow, saved});
    result.program = program;
    result.program.functions.push_back(std::move(out));
    return result;
  }
  if (const auto* s = ret.value.get<ScalarRef>()) plan.seed_target = shadow_name(s->name);

  ReverseContext ctx;
  ctx.fn = fn;
  ctx.plan = &plan;
  ctx.names = &names;
  ctx.book = &extra;
  propagate(ret.value, lit(options.seed), ctx, body);
  auto rev = reverse_block(forward, ctx);
  body.insert(body.end(), rev.begin(), rev.end());
  for (const auto& [shadow, saved] : stashed) body.emplace_back(ParallelAccumulate{shadow, saved});

  std::map<const StmtNode*, int> grad_ids;
  int g = 0;
  walk_statements(body, [&](const Stmt& s) {
    if (s.get<ParallelFor>()) grad_ids[&s.node()] = ++g;
  });
  for (const auto& [primal, node] : extra.reverse_kernels)
    if (primal) plan.kernel_pairs[primal] = grad_ids.at(node);

  result.program = program;
  result.program.functions.push_back(std::move(out));
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Stmt> strip(const std::vector<Stmt>& body, const std::set<std::string>& names) {
  std::vector<Stmt> out;
  for (const Stmt& s : body) {
    if (const auto* a = s.get<AssignView>(); a && a->atomic && names.count(a->target.view)) {
      out.emplace_back(AssignView{a->target, AssignOp::Add, a->value, false}, s.span());
    } else if (const auto* a = s.get<AssignScalar>(); a && a->atomic && names.count(a->name)) {
      out.emplace_back(AssignScalar{a->name, AssignOp::Add, a->value, false}, s.span());
    } else if (const auto* i = s.get<If>()) {
      out.emplace_back(If{i->cond, strip(i->body, names)}, s.span());
    } else if (const auto* k = s.get<ParallelFor>()) {
      out.emplace_back(ParallelFor{k->counter, k->upper, strip(k->body, names)}, s.span());
    } else {
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace

Program strip_atomics(const Program& program, const std::string& fn, const std::set<std::string>& names) {
  Program out = program;
  for (FunctionDef& f : out.functions)
    if (f.name == fn) f.body = strip(f.body, names);
  return out;
}

}  // namespace krn
