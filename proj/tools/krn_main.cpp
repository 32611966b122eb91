// krn: differentiate, run, check and benchmark kernel-language programs.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "krn/adjoint.hpp"
#include "krn/analysis.hpp"
#include "krn/frontend.hpp"
#include "krn/runtime.hpp"
#include "krn/tensor_io.hpp"
#include "krn/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;

const char* kLaplacian = "normRes1DLaplacianSQ";

struct Options {
  std::string input;
  std::string output;
  std::string fn;
  std::vector<std::string> wrt;
  std::vector<std::string> views;
  std::vector<std::string> scalars;
  std::vector<std::int64_t> sizes{1000};
  std::vector<int> threads{1};
  std::uint64_t seed = 1;
  double h = 1e-6;
  double rtol = 1e-5;
  double atol = 1e-9;
  bool atol_given = false;
  int reps = 5;
  bool nondeterministic = false;
  bool detect = false;
  bool check_finite = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw krn::Error(krn::ErrorKind::Io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

krn::Program load(const std::string& path) { return krn::parse(read_file(path)); }

// Resolves --fn, defaulting to the only function in the file.
std::string pick_function(const krn::Program& p, const std::string& fn) {
  if (!fn.empty()) {
    if (!p.find(fn)) throw krn::Error(krn::ErrorKind::UnknownFunction, "unknown function '" + fn + "'");
    return fn;
  }
  if (p.functions.size() == 1) return p.functions.front().name;
  throw krn::Error(krn::ErrorKind::InvalidArgument, "file defines several functions; pass --fn");
}

std::pair<std::string, std::string> split_binding(const std::string& s) {
  auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0)
    throw krn::Error(krn::ErrorKind::InvalidArgument, "expected name=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

krn::ExecutionConfig config(const Options& o, int threads) {
  krn::ExecutionConfig cfg;
  cfg.threads = threads;
  cfg.deterministic_reduction = !o.nondeterministic;
  cfg.rng_seed = o.seed;
  cfg.check_finite = o.check_finite;
  return cfg;
}

int cmd_diff(const Options& o) {
  krn::Program p = load(o.input);
  std::string fn = pick_function(p, o.fn);
  std::set<std::string> wrt(o.wrt.begin(), o.wrt.end());
  krn::DiffResult r = krn::differentiate(p, fn, wrt);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::string text = krn::emit(r.program);
  if (o.output.empty() || o.output == "-") {
    std::cout << text;
  } else {
    std::ofstream out(o.output, std::ios::binary);
    if (!(out << text)) throw krn::Error(krn::ErrorKind::Io, "cannot write '" + o.output + "'");
  }
  return kOk;
}

int cmd_run(const Options& o) {
  krn::Program p = load(o.input);
  std::string fn = pick_function(p, o.fn);
  krn::Inputs inputs;
  for (const auto& b : o.views) {
    auto [name, path] = split_binding(b);
    inputs[name] = krn::read_tensor(path);
  }
  for (const auto& b : o.scalars) {
    auto [name, text] = split_binding(b);
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw krn::Error(krn::ErrorKind::InvalidArgument, "bad number '" + text + "'");
    inputs[name] = v;
  }
  krn::ExecutionConfig cfg = config(o, o.threads.front());
  cfg.conflict_detect = o.detect;
  krn::ExecResult r = krn::execute(p, fn, inputs, cfg);
  if (r.value) std::cout << "result " << krn::format_number(*r.value) << "\n";
  for (const krn::Param& param : p.find(fn)->params) {
    if (!param.view) continue;
    std::cout << param.name << " " << krn::format_tensor(std::get<krn::View>(inputs.at(param.name)));
  }
  if (o.detect) {
    std::cout << (r.conflicts.empty() ? "no conflicts\n" : r.conflicts.format());
    if (!r.conflicts.empty()) return kVerifyFailed;
  }
  return kOk;
}

krn::Gradient as_gradient(const std::vector<double>& gx, const std::vector<double>& gb) {
  auto n = static_cast<std::int64_t>(gx.size());
  return {{"x", krn::View({n}, gx)}, {"b", krn::View({n}, gb)}};
}

int cmd_grad_check(const Options& o) {
  krn::Program p = load(o.input);
  std::string fn = pick_function(p, o.fn);
  std::set<std::string> wrt(o.wrt.begin(), o.wrt.end());
  krn::ExecutionConfig cfg = config(o, o.threads.front());
  std::int64_t n = o.sizes.front();
  krn::Inputs inputs = krn::random_inputs(*p.find(fn), n, o.seed);

  krn::DiffResult d = krn::differentiate(p, fn, wrt);
  for (const auto& w : d.warnings) std::cerr << "warning: " << w << "\n";
  krn::Gradient ad = krn::run_gradient(d.program, fn, inputs, wrt, cfg);
  krn::Gradient fd = krn::finite_difference_gradient(p, fn, inputs, wrt, o.h, cfg);
  double atol = o.atol;
  if (!o.atol_given) {
    // large |f| makes f(p+h)-f(p-h) lose digits; widen atol by that amount
    krn::Inputs probe = krn::clone_inputs(inputs);
    double f = krn::execute(p, fn, probe, cfg).value.value_or(0.0);
    atol = std::max(atol, krn::fd_roundoff_floor(f, o.h));
  }
  krn::GradientReport report = krn::check_gradient(ad, fd, atol, o.rtol);
  report.step = o.h;
  std::cout << "AD vs central finite differences (n=" << n << ", seed=" << o.seed << ")\n" << report.format();
  bool pass = report.pass;

  if (fn == kLaplacian) {
    const auto& x = std::get<krn::View>(inputs.at("x"));
    const auto& b = std::get<krn::View>(inputs.at("b"));
    krn::LaplacianResult oracle = krn::laplacian_oracle(x.values(), b.values());
    krn::Gradient ref = as_gradient(oracle.grad_x, oracle.grad_b);
    krn::Gradient ad_sub;
    for (const auto& [name, v] : ad)
      if (ref.count(name)) ad_sub.emplace(name, v);
    for (auto it = ref.begin(); it != ref.end();) it = ad_sub.count(it->first) ? std::next(it) : ref.erase(it);
    krn::GradientReport exact = krn::check_gradient(ad_sub, ref, 0.0, 1e-12);
    std::cout << "\nAD vs analytic oracle 6 A^T y, -2 y\n" << exact.format();
    pass = pass && exact.pass;
  }
  return pass ? kOk : kVerifyFailed;
}

int cmd_race_report(const Options& o) {
  krn::Program p = load(o.input);
  std::string fn = pick_function(p, o.fn);
  std::cout << krn::format_race_report(krn::race_analysis(*p.find(fn)));
  return kOk;
}

int cmd_bench(const Options& o) {
  krn::Program p = load(o.input);
  std::string fn = pick_function(p, o.fn);
  std::cout << "n,threads,primal_s,grad_s,ratio\n";
  for (std::int64_t n : o.sizes)
    for (int t : o.threads) {
      krn::BenchResult r = krn::bench_ratio(p, fn, n, config(o, t), o.reps, o.seed);
      std::cout << r.n << "," << r.threads << "," << r.primal_s << "," << r.grad_s << "," << r.ratio << "\n";
    }
  return kOk;
}

void report_error(const std::string& path, const krn::Error& e) {
  if (e.kind() == krn::ErrorKind::Parse || e.kind() == krn::ErrorKind::Validation) {
    std::istringstream lines(e.what());
    std::string line;
    while (std::getline(lines, line)) std::cerr << path << ":" << line << "\n";
  } else {
    std::cerr << "error: " << e.what() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"krn: reverse-mode differentiation of parallel array kernels"};
  app.require_subcommand(1);
  Options o;

  auto input = [&](CLI::App* c) { c->add_option("input", o.input, "kernel source file (.krn)")->required(); };
  auto fn = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--fn", o.fn, "function name");
    if (required) opt->required();
  };
  auto wrt = [&](CLI::App* c) {
    c->add_option("--wrt", o.wrt, "parameters to differentiate with respect to")->delimiter(',')->allow_extra_args(false)->required();
  };

  auto* diff = app.add_subcommand("diff", "append <fn>_grad and print the program");
  input(diff);
  fn(diff, true);
  wrt(diff);
  diff->add_option("-o,--output", o.output, "output file (default stdout)");

  auto* run = app.add_subcommand("run", "execute a function on tensor files");
  input(run);
  fn(run, false);
  run->add_option("--view", o.views, "name=path tensor input")->allow_extra_args(false);
  run->add_option("--scalar", o.scalars, "name=value scalar input")->allow_extra_args(false);
  run->add_option("--threads", o.threads, "worker threads")->expected(1);
  run->add_flag("--detect-conflicts", o.detect, "log kernel accesses and report conflicting iterations");
  run->add_flag("--check-finite", o.check_finite, "fail on NaN or infinity");
  run->add_flag("--nondeterministic", o.nondeterministic, "plain atomics and per-thread reduction order");
  run->add_option("--seed", o.seed, "iteration shuffle seed for --detect-conflicts");

  auto* check = app.add_subcommand("grad-check", "compare AD against finite differences on random inputs");
  input(check);
  fn(check, false);
  wrt(check);
  check->add_option("--n", o.sizes, "runtime extent of the inputs")->expected(1);
  check->add_option("--seed", o.seed, "input seed");
  check->add_option("--step", o.h, "finite-difference step h");
  check->add_option("--rtol", o.rtol, "relative tolerance");
  check->add_option("--atol", o.atol, "absolute tolerance (default max(1e-9, FD rounding floor))")
      ->each([&](const std::string&) { o.atol_given = true; });
  check->add_option("--threads", o.threads, "worker threads")->expected(1);

  auto* race = app.add_subcommand("race-report", "list accesses whose adjoint updates need atomics");
  input(race);
  fn(race, false);

  auto* bench = app.add_subcommand("bench", "time gradient against primal, CSV output");
  input(bench);
  fn(bench, false);
  bench->add_option("--n", o.sizes, "problem sizes")->delimiter(',')->allow_extra_args(false);
  bench->add_option("--threads", o.threads, "thread counts")->delimiter(',')->allow_extra_args(false);
  bench->add_option("--reps", o.reps, "repetitions, best time is kept")->check(CLI::Range(3, 1000000));
  bench->add_option("--seed", o.seed, "input seed");
  bench->add_flag("--nondeterministic", o.nondeterministic, "plain atomics and per-thread reduction order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*diff) return cmd_diff(o);
    if (*run) return cmd_run(o);
    if (*check) return cmd_grad_check(o);
    if (*race) return cmd_race_report(o);
    if (*bench) return cmd_bench(o);
  } catch (const krn::Error& e) {
    report_error(o.input, e);
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
