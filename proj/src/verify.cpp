#include "krn/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "krn/error.hpp"

namespace krn {

namespace {

double evaluate(Interpreter& interp, const Inputs& inputs, const ExecutionConfig& cfg) {
  Inputs fresh = clone_inputs(inputs);
  auto r = interp.run(fresh, cfg);
  if (!r.value) throw Error(ErrorKind::NotScalarReturn, "function does not return a scalar");
  return *r.value;
}

const Param& require_param(const FunctionDef& fn, const std::string& name) {
  const Param* p = fn.find_param(name);
  if (!p) throw Error(ErrorKind::UnknownParameter, "'" + name + "' is not a parameter of '" + fn.name + "'");
  return *p;
}

std::vector<std::int64_t> unflatten(const View& v, std::size_t k) {
  if (v.rank() == 2) {
    auto cols = static_cast<std::size_t>(v.extent(1));
    return {static_cast<std::int64_t>(k / cols), static_cast<std::int64_t>(k % cols)};
  }
  return {static_cast<std::int64_t>(k)};
}

}  // namespace

Gradient finite_difference_gradient(const Program& program, const std::string& fn, const Inputs& inputs,
                                    const std::set<std::string>& wrt, double h, const ExecutionConfig& cfg) {
  if (!(h > 0)) throw Error(ErrorKind::InvalidArgument, "finite-difference step must be positive");
  const FunctionDef* f = program.find(fn);
  if (!f) throw Error(ErrorKind::UnknownFunction, "unknown function '" + fn + "'");
  Interpreter interp(program, fn);
  Gradient out;
  for (const std::string& name : wrt) {
    require_param(*f, name);
    auto it = inputs.find(name);
    if (it == inputs.end()) throw Error(ErrorKind::InvalidArgument, "missing input for parameter '" + name + "'");
    if (const auto* d = std::get_if<double>(&it->second)) {
      Inputs plus = inputs, minus = inputs;
      plus[name] = *d + h;
      minus[name] = *d - h;
      double g = (evaluate(interp, plus, cfg) - evaluate(interp, minus, cfg)) / (2 * h);
      out.emplace(name, View({1}, {g}));
      continue;
    }
    const View& base = std::get<View>(it->second);
    View grad(base.extents());
    for (std::size_t k = 0; k < base.size(); ++k) {
      Inputs shifted = clone_inputs(inputs);
      View& v = std::get<View>(shifted[name]);
      double x0 = v.data()[k];
      v.data()[k] = x0 + h;
      double fp = evaluate(interp, shifted, cfg);
      v.data()[k] = x0 - h;
      double fm = evaluate(interp, shifted, cfg);
      grad.data()[k] = (fp - fm) / (2 * h);
    }
    out.emplace(name, std::move(grad));
  }
  return out;
}

double fd_roundoff_floor(double f, double h) {
  return 4 * std::numeric_limits<double>::epsilon() * std::max(std::abs(f), 1.0) / h;
}

Gradient run_gradient(const Program& differentiated, const std::string& fn, const Inputs& inputs,
                      const std::set<std::string>& wrt, const ExecutionConfig& cfg) {
  const FunctionDef* primal = differentiated.find(fn);
  const FunctionDef* grad = differentiated.find(gradient_name(fn));
  if (!primal || !grad) throw Error(ErrorKind::UnknownFunction, "program has no '" + gradient_name(fn) + "'");
  Inputs run = clone_inputs(inputs);
  std::map<std::string, std::string> shadow_of;
  for (std::size_t i = primal->params.size(); i < grad->params.size(); ++i) {
    const std::string& s = grad->params[i].name;
    std::string p = s.substr(3);
    auto it = inputs.find(p);
    if (it == inputs.end()) throw Error(ErrorKind::InvalidArgument, "missing input for parameter '" + p + "'");
    if (const auto* v = std::get_if<View>(&it->second))
      run[s] = View(v->extents());
    else
      run[s] = View({1});
    shadow_of[p] = s;
  }
  Interpreter interp(differentiated, grad->name);
  interp.run(run, cfg);
  Gradient out;
  for (const std::string& name : wrt) {
    auto it = shadow_of.find(name);
    if (it == shadow_of.end()) throw Error(ErrorKind::InvalidArgument, "'" + name + "' has no adjoint parameter");
    out.emplace(name, std::get<View>(run[it->second]));
  }
  return out;
}

Gradient ad_gradient(const Program& program, const std::string& fn, const Inputs& inputs,
                     const std::set<std::string>& wrt, const ExecutionConfig& cfg) {
  DiffResult d = differentiate(program, fn, wrt);
  return run_gradient(d.program, fn, inputs, wrt, cfg);
}

LaplacianResult laplacian_oracle(const std::vector<double>& x, const std::vector<double>& b) {
  if (x.size() != b.size() || x.empty())
    throw Error(ErrorKind::ShapeMismatch, "x and b must have the same nonzero length");
  const std::size_t n = x.size();
  auto tridiag = [n](const std::vector<double>& v, std::size_t i) {
    double s = 2 * v[i];
    if (i > 0) s -= v[i - 1];
    if (i + 1 < n) s -= v[i + 1];
    return s;
  };
  std::vector<double> x3(n), y(n);
  for (std::size_t i = 0; i < n; ++i) x3[i] = 3 * x[i];
  LaplacianResult r;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = tridiag(x3, i) - b[i];
    r.f += y[i] * y[i];
  }
  r.grad_x.resize(n);
  r.grad_b.resize(n);
  // A is symmetric, so A^T y = A y.
  for (std::size_t i = 0; i < n; ++i) {
    r.grad_x[i] = 6 * tridiag(y, i);
    r.grad_b[i] = -2 * y[i];
  }
  return r;
}

std::vector<GradientEntry> GradientReport::failures() const {
  std::vector<GradientEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out), [](const auto& e) { return !e.ok; });
  return out;
}

std::string GradientReport::format(std::size_t limit) const {
  std::ostringstream os;
  os << std::left << std::setw(10) << "param" << std::setw(12) << "index" << std::right << std::setw(24) << "ad"
     << std::setw(24) << "reference" << std::setw(12) << "abs_err" << std::setw(12) << "rel_err" << "  status\n";
  std::size_t shown = 0;
  for (const GradientEntry& e : entries) {
    if (e.ok && shown >= limit) continue;
    std::string idx;
    for (std::size_t d = 0; d < e.index.size(); ++d) idx += (d ? "," : "") + std::to_string(e.index[d]);
    os << std::left << std::setw(10) << e.param << std::setw(12) << ("(" + idx + ")") << std::right
       << std::setprecision(15) << std::setw(24) << e.ad << std::setw(24) << e.reference << std::setprecision(3)
       << std::setw(12) << e.abs_error << std::setw(12) << e.rel_error << "  " << (e.ok ? "ok" : "FAIL") << "\n";
    ++shown;
  }
  if (shown < entries.size()) os << "... " << entries.size() - shown << " more entries within tolerance\n";
  os << std::setprecision(3) << "entries=" << entries.size() << " max_abs_err=" << max_abs_error
     << " max_rel_err=" << max_rel_error << " atol=" << atol << " rtol=" << rtol;
  if (step > 0) os << " h=" << step;
  os << " result=" << (pass ? "PASS" : "FAIL") << "\n";
  return os.str();
}

GradientReport check_gradient(const Gradient& ad, const Gradient& reference, double atol, double rtol) {
  GradientReport report;
  report.atol = atol;
  report.rtol = rtol;
  for (const auto& [name, ref] : reference) {
    auto it = ad.find(name);
    if (it == ad.end()) throw Error(ErrorKind::ShapeMismatch, "no AD gradient for '" + name + "'");
    const View& got = it->second;
    if (got.extents() != ref.extents()) throw Error(ErrorKind::ShapeMismatch, "gradient shapes differ for '" + name + "'");
    for (std::size_t k = 0; k < ref.size(); ++k) {
      GradientEntry e;
      e.param = name;
      e.index = unflatten(ref, k);
      e.ad = got.data()[k];
      e.reference = ref.data()[k];
      e.abs_error = std::abs(e.ad - e.reference);
      e.rel_error = e.reference != 0 ? e.abs_error / std::abs(e.reference) : (e.abs_error == 0 ? 0.0 : INFINITY);
      e.ok = e.abs_error <= atol + rtol * std::abs(e.reference);
      report.pass = report.pass && e.ok;
      report.max_abs_error = std::max(report.max_abs_error, e.abs_error);
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

namespace {

void index_views(const Index& e, std::set<std::string>& out) {
  for_each_access(e, [&](const ViewAccess& a, bool) { out.insert(a.view); });
}

void index_views(const Expr& e, std::set<std::string>& out) {
  for_each_access(e, [&](const ViewAccess& a, bool) {
    for (const Index& i : a.indices) index_views(i, out);
  });
}

}  // namespace

Inputs random_inputs(const FunctionDef& fn, std::int64_t n, std::uint64_t seed) {
  std::set<std::string> used_as_index;
  walk_statements(fn.body, [&](const Stmt& s) {
    if (const auto* a = s.get<AssignView>()) {
      for (const Index& i : a->target.indices) index_views(i, used_as_index);
      index_views(a->value, used_as_index);
    } else if (const auto* a = s.get<AssignScalar>()) {
      index_views(a->value, used_as_index);
    } else if (const auto* d = s.get<DeclScalar>()) {
      if (d->init) index_views(*d->init, used_as_index);
    } else if (const auto* i = s.get<If>()) {
      index_views(i->cond.lhs, used_as_index);
      index_views(i->cond.rhs, used_as_index);
    } else if (const auto* k = s.get<ParallelFor>()) {
      index_views(k->upper, used_as_index);
    } else if (const auto* d = s.get<DeclView>()) {
      for (const Index& i : d->dynamic_extents) index_views(i, used_as_index);
    }
  });

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  Inputs out;
  for (const Param& p : fn.params) {
    if (!p.view) {
      out.emplace(p.name, value(rng));
      continue;
    }
    std::vector<std::int64_t> extents;
    for (const auto& e : p.view->extents) extents.push_back(e ? *e : n);
    View v(extents);
    if (used_as_index.count(p.name)) {
      std::uniform_int_distribution<std::int64_t> pick(0, std::max<std::int64_t>(n - 1, 0));
      for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = static_cast<double>(pick(rng));
    } else {
      for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = value(rng);
    }
    out.emplace(p.name, std::move(v));
  }
  return out;
}

BenchResult bench_ratio(const Program& program, const std::string& fn, std::int64_t n, const ExecutionConfig& cfg,
                        int reps, std::uint64_t seed) {
  if (reps < 3) throw Error(ErrorKind::InvalidArgument, "bench needs at least 3 repetitions");
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "bench size must be at least 1");
  const FunctionDef* f = program.find(fn);
  if (!f) throw Error(ErrorKind::UnknownFunction, "unknown function '" + fn + "'");
  std::set<std::string> wrt;
  for (const Param& p : f->params)
    if (p.view) wrt.insert(p.name);
  DiffResult d = differentiate(program, fn, wrt);
  const FunctionDef& g = *d.program.find(gradient_name(fn));

  Inputs base = random_inputs(*f, n, seed);
  Inputs grad_base = base;
  for (std::size_t i = f->params.size(); i < g.params.size(); ++i) {
    const std::string p = g.params[i].name.substr(3);
    const auto* v = std::get_if<View>(&base.at(p));
    grad_base[g.params[i].name] = v ? View(v->extents()) : View({1});
  }

  Interpreter primal(program, fn);
  Interpreter gradient(d.program, g.name);
  BenchResult r;
  r.n = n;
  r.threads = effective_threads(cfg);
  r.reps = reps;
  r.primal_s = r.grad_s = INFINITY;
  using clock = std::chrono::steady_clock;
  for (int rep = 0; rep < reps; ++rep) {
    Inputs a = clone_inputs(base);
    auto t0 = clock::now();
    primal.run(a, cfg);
    auto t1 = clock::now();
    Inputs b = clone_inputs(grad_base);
    auto t2 = clock::now();
    gradient.run(b, cfg);
    auto t3 = clock::now();
    r.primal_s = std::min(r.primal_s, std::chrono::duration<double>(t1 - t0).count());
    r.grad_s = std::min(r.grad_s, std::chrono::duration<double>(t3 - t2).count());
  }
  r.ratio = r.grad_s / r.primal_s;
  return r;
}

}  // namespace krn
