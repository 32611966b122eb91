#include "krn/analysis.hpp"

#include <algorithm>
#include <sstream>

#include "krn/error.hpp"
#include "krn/frontend.hpp"
#include "krn/index_ops.hpp"

namespace krn {

// ---------------------------------------------------------------------------
// Activity

bool ActivityResult::active(const Stmt& s) const {
  auto it = statements.find(&s.node());
  return it != statements.end() && it->second;
}

bool depends_on_active(const Expr& e, const ActivityResult& act) {
  if (const auto* s = e.get<ScalarRef>()) return act.scalar_active(s->name);
  if (const auto* a = e.get<ViewAccess>()) return act.view_active(a->view);
  if (const auto* b = e.get<Binary>()) return depends_on_active(b->lhs, act) || depends_on_active(b->rhs, act);
  if (const auto* n = e.get<Negate>()) return depends_on_active(n->operand, act);
  return false;
}

namespace {

bool source_active(const std::variant<std::string, Expr>& src, const ActivityResult& act) {
  if (const auto* v = std::get_if<std::string>(&src)) return act.view_active(*v);
  return depends_on_active(std::get<Expr>(src), act);
}

// One propagation sweep; returns true if anything became active.
bool propagate(const std::vector<Stmt>& body, ActivityResult& act) {
  bool changed = false;
  auto mark_view = [&](const std::string& v) { changed |= act.views.insert(v).second; };
  auto mark_scalar = [&](const std::string& v) { changed |= act.scalars.insert(v).second; };
  walk_statements(body, [&](const Stmt& s) {
    if (const auto* a = s.get<AssignView>()) {
      if (depends_on_active(a->value, act)) mark_view(a->target.view);
    } else if (const auto* a = s.get<AssignScalar>()) {
      if (depends_on_active(a->value, act)) mark_scalar(a->name);
    } else if (const auto* d = s.get<DeclScalar>()) {
      if (d->init && depends_on_active(*d->init, act)) mark_scalar(d->name);
    } else if (const auto* c = s.get<DeepCopy>()) {
      if (source_active(c->source, act)) mark_view(c->dst);
    } else if (const auto* p = s.get<ParallelSum>()) {
      if (act.view_active(p->view)) mark_scalar(p->scalar);
    } else if (const auto* p = s.get<ParallelAccumulate>()) {
      if (source_active(p->source, act)) mark_view(p->view);
    }
  });
  return changed;
}

bool statement_active(const Stmt& s, const ActivityResult& act) {
  if (const auto* a = s.get<AssignView>()) return act.view_active(a->target.view);
  if (const auto* a = s.get<AssignScalar>()) return act.scalar_active(a->name);
  if (const auto* d = s.get<DeclScalar>()) return act.scalar_active(d->name);
  if (const auto* c = s.get<DeepCopy>()) return act.view_active(c->dst);
  if (const auto* p = s.get<ParallelSum>()) return act.scalar_active(p->scalar);
  if (const auto* p = s.get<ParallelAccumulate>()) return act.view_active(p->view);
  if (const auto* r = s.get<Return>()) return depends_on_active(r->value, act);
  const std::vector<Stmt>* body = nullptr;
  if (const auto* i = s.get<If>()) body = &i->body;
  if (const auto* k = s.get<ParallelFor>()) body = &k->body;
  if (body)
    return std::any_of(body->begin(), body->end(), [&](const Stmt& c) { return statement_active(c, act); });
  return false;
}

}  // namespace

ActivityResult activity(const FunctionDef& fn, const std::set<std::string>& wrt) {
  ActivityResult act;
  for (const std::string& name : wrt) {
    const Param* p = fn.find_param(name);
    if (!p) throw Error(ErrorKind::UnknownParameter, "'" + name + "' is not a parameter of '" + fn.name + "'");
    if (p->is_view())
      act.views.insert(name);
    else
      act.scalars.insert(name);
  }
  while (propagate(fn.body, act)) {
  }
  walk_statements(fn.body, [&](const Stmt& s) { act.statements[&s.node()] = statement_active(s, act); });
  return act;
}

// ---------------------------------------------------------------------------
// Race analysis

bool RaceResult::flagged(int kernel, const std::string& name) const {
  return std::any_of(flags.begin(), flags.end(),
                     [&](const RaceFlag& f) { return f.kernel == kernel && f.name == name; });
}

std::set<std::string> RaceResult::flagged_in(int kernel) const {
  std::set<std::string> out;
  for (const RaceFlag& f : flags)
    if (f.kernel == kernel) out.insert(f.name);
  return out;
}

namespace {

struct KernelAccesses {
  std::vector<std::string> order;  // first-appearance order of names
  std::map<std::string, std::vector<std::vector<Index>>> subscripts;
  std::vector<std::string> outer_scalars;
};

void record(KernelAccesses& k, const ViewAccess& a) {
  if (!k.subscripts.count(a.view)) k.order.push_back(a.view);
  k.subscripts[a.view].push_back(a.indices);
}

void record_expr(KernelAccesses& k, const Expr& e) {
  for_each_access(e, [&](const ViewAccess& a, bool) { record(k, a); });
}

void record_index(KernelAccesses& k, const Index& e) {
  for_each_access(e, [&](const ViewAccess& a, bool) { record(k, a); });
}

void scan_kernel_body(const std::vector<Stmt>& body, KernelAccesses& k, std::set<std::string>& locals) {
  for (const Stmt& s : body) {
    std::vector<std::string> scalars;
    if (const auto* a = s.get<AssignView>()) {
      record(k, a->target);
      for (const Index& i : a->target.indices) record_index(k, i);
      record_expr(k, a->value);
      collect_scalar_reads(a->value, scalars);
    } else if (const auto* a = s.get<AssignScalar>()) {
      record_expr(k, a->value);
      collect_scalar_reads(a->value, scalars);
      scalars.push_back(a->name);
    } else if (const auto* d = s.get<DeclScalar>()) {
      if (d->init) {
        record_expr(k, *d->init);
        collect_scalar_reads(*d->init, scalars);
      }
      locals.insert(d->name);
    } else if (const auto* i = s.get<If>()) {
      record_index(k, i->cond.lhs);
      record_index(k, i->cond.rhs);
      scan_kernel_body(i->body, k, locals);
    }
    for (const std::string& name : scalars) {
      if (locals.count(name)) continue;
      if (std::find(k.outer_scalars.begin(), k.outer_scalars.end(), name) == k.outer_scalars.end())
        k.outer_scalars.push_back(name);
    }
  }
}

bool has_indirect(const std::vector<Index>& subs) {
  bool found = false;
  for (const Index& i : subs) for_each_access(i, [&](const ViewAccess&, bool) { found = true; });
  return found;
}

bool uses_counter(const std::vector<Index>& subs, const std::string& counter) {
  return std::any_of(subs.begin(), subs.end(), [&](const Index& i) { return free_counters(i).count(counter) != 0; });
}

std::vector<std::vector<Index>> distinct(const std::vector<std::vector<Index>>& all) {
  std::vector<std::vector<Index>> out;
  for (const auto& s : all)
    if (std::none_of(out.begin(), out.end(), [&](const auto& o) { return equivalent(o, s); })) out.push_back(s);
  return out;
}

}  // namespace

RaceResult race_analysis(const FunctionDef& fn) {
  RaceResult result;
  int kernel = 0;
  walk_statements(fn.body, [&](const Stmt& s) {
    const auto* pf = s.get<ParallelFor>();
    if (!pf) return;
    ++kernel;
    KernelAccesses acc;
    std::set<std::string> locals;
    scan_kernel_body(pf->body, acc, locals);

    for (const std::string& view : acc.order) {
      const auto& all = acc.subscripts.at(view);
      std::vector<std::vector<Index>> indirect, counted, fixed;
      for (const auto& subs : all) {
        if (has_indirect(subs)) indirect.push_back(subs);
        if (uses_counter(subs, pf->counter))
          counted.push_back(subs);
        else
          fixed.push_back(subs);
      }
      if (!indirect.empty()) result.flags.push_back({kernel, view, RaceRule::IndirectIndex, false, distinct(indirect)});
      auto distinct_counted = distinct(counted);
      if (distinct_counted.size() >= 2)
        result.flags.push_back({kernel, view, RaceRule::DistinctIndices, false, distinct_counted});
      if (!fixed.empty()) result.flags.push_back({kernel, view, RaceRule::CounterFree, false, distinct(fixed)});
    }
    for (const std::string& scalar : acc.outer_scalars)
      result.flags.push_back({kernel, scalar, RaceRule::CounterFree, true, {}});
  });
  return result;
}

std::string format_race_report(const RaceResult& result) {
  std::ostringstream os;
  for (const RaceFlag& f : result.flags) {
    os << "kernel#" << f.kernel << " view=" << f.name << " rule=" << static_cast<int>(f.rule) << " indices=[";
    for (std::size_t i = 0; i < f.subscripts.size(); ++i) {
      const auto& subs = f.subscripts[i];
      os << (i ? ", " : "");
      if (subs.size() == 1) {
        os << to_source(subs[0]);
      } else {
        os << "(";
        for (std::size_t d = 0; d < subs.size(); ++d) os << (d ? ", " : "") << to_source(subs[d]);
        os << ")";
      }
    }
    os << "]\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Taping feasibility

namespace {

// Extents never change after declaration, so only element reads count.
template <class Node>
void accessed_views(const Node& e, std::set<std::string>& out) {
  for_each_access(e, [&](const ViewAccess& a, bool) { out.insert(a.view); });
}

void references(const Expr& e, std::set<std::string>& out) {
  std::vector<std::string> names;
  collect_scalar_reads(e, names);
  out.insert(names.begin(), names.end());
  accessed_views(e, out);
}

void partials(const Expr& e, const ActivityResult& act, std::set<std::string>& out) {
  if (const auto* b = e.get<Binary>()) {
    bool l = depends_on_active(b->lhs, act);
    bool r = depends_on_active(b->rhs, act);
    if (b->op == BinaryOp::Mul) {
      if (l) references(b->rhs, out);
      if (r) references(b->lhs, out);
    } else if (b->op == BinaryOp::Div) {
      if (l) references(b->rhs, out);
      if (r) {
        references(b->lhs, out);
        references(b->rhs, out);
      }
    }
    partials(b->lhs, act, out);
    partials(b->rhs, act, out);
  } else if (const auto* n = e.get<Negate>()) {
    partials(n->operand, act, out);
  }
}

struct FlatStmt {
  const Stmt* stmt;
  std::size_t order;
  const ParallelFor* kernel;
  std::vector<const If*> guards;
};

void flatten(const std::vector<Stmt>& body, const ParallelFor* kernel, std::vector<const If*> guards,
             std::vector<FlatStmt>& out) {
  for (const Stmt& s : body) {
    out.push_back({&s, out.size(), kernel, guards});
    if (const auto* i = s.get<If>()) {
      auto inner = guards;
      inner.push_back(i);
      flatten(i->body, kernel, inner, out);
    } else if (const auto* k = s.get<ParallelFor>()) {
      flatten(k->body, k, {}, out);
    }
  }
}

std::set<std::string> writes(const Stmt& s) {
  if (const auto* a = s.get<AssignView>()) return {a->target.view};
  if (const auto* a = s.get<AssignScalar>()) return {a->name};
  if (const auto* d = s.get<DeclScalar>()) return {d->name};
  if (const auto* c = s.get<DeepCopy>()) return {c->dst};
  if (const auto* p = s.get<ParallelSum>()) return {p->scalar};
  if (const auto* p = s.get<ParallelAccumulate>()) return {p->view};
  return {};
}

// Views read by the subscripts the adjoint of `s` will evaluate.
void subscript_views(const Stmt& s, std::set<std::string>& out) {
  auto from_access = [&](const ViewAccess& a) {
    for (const Index& i : a.indices) accessed_views(i, out);
  };
  auto from_expr = [&](const Expr& e) { for_each_access(e, [&](const ViewAccess& a, bool) { from_access(a); }); };
  if (const auto* a = s.get<AssignView>()) {
    from_access(a->target);
    from_expr(a->value);
  } else if (const auto* a = s.get<AssignScalar>()) {
    from_expr(a->value);
  } else if (const auto* d = s.get<DeclScalar>()) {
    if (d->init) from_expr(*d->init);
  } else if (const auto* c = s.get<DeepCopy>()) {
    if (const auto* e = std::get_if<Expr>(&c->source)) from_expr(*e);
  } else if (const auto* p = s.get<ParallelAccumulate>()) {
    if (const auto* e = std::get_if<Expr>(&p->source)) from_expr(*e);
  }
}

}  // namespace

std::set<std::string> partial_references(const Expr& e, const ActivityResult& act) {
  std::set<std::string> out;
  partials(e, act, out);
  return out;
}

TapingVerdict taping_feasibility(const FunctionDef& fn, const ActivityResult& act) {
  TapingVerdict verdict;
  std::vector<FlatStmt> flat;
  flatten(fn.body, nullptr, {}, flat);

  std::set<std::string> kernel_locals;
  for (const FlatStmt& f : flat)
    if (f.kernel)
      if (const auto* d = f.stmt->get<DeclScalar>()) kernel_locals.insert(d->name);

  for (const FlatStmt& f : flat) {
    const Stmt& s = *f.stmt;
    if (!act.active(s) || s.get<If>() || s.get<ParallelFor>() || s.get<Return>()) continue;

    std::set<std::string> needed;
    if (const auto* a = s.get<AssignView>()) {
      partials(a->value, act, needed);
    } else if (const auto* a = s.get<AssignScalar>()) {
      partials(a->value, act, needed);
    } else if (const auto* d = s.get<DeclScalar>()) {
      if (d->init) partials(*d->init, act, needed);
    } else if (const auto* c = s.get<DeepCopy>()) {
      if (const auto* e = std::get_if<Expr>(&c->source)) partials(*e, act, needed);
    } else if (const auto* p = s.get<ParallelAccumulate>()) {
      if (const auto* e = std::get_if<Expr>(&p->source)) partials(*e, act, needed);
    }
    subscript_views(s, needed);
    for (const If* g : f.guards) {
      accessed_views(g->cond.lhs, needed);
      accessed_views(g->cond.rhs, needed);
    }
    if (f.kernel) accessed_views(f.kernel->upper, needed);

    for (const std::string& name : needed) {
      if (kernel_locals.count(name)) {
        verdict.violations.push_back({s.span(), name, s.span(),
                                      "kernel-local temporary '" + name +
                                          "' is needed by the reverse pass but cannot be recorded inside a kernel"});
        continue;
      }
      for (std::size_t t = f.order; t < flat.size(); ++t) {
        if (writes(*flat[t].stmt).count(name)) {
          verdict.violations.push_back(
              {s.span(), name, flat[t].stmt->span(),
               "'" + name + "' is needed by the reverse pass but is overwritten " +
                   (t == f.order ? std::string("by the same statement") : std::string("later in the forward pass"))});
          break;
        }
      }
    }
  }
  verdict.ok = verdict.violations.empty();
  return verdict;
}

}  // namespace krn
