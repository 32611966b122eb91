#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "krn/adjoint.hpp"
#include "krn/runtime.hpp"

namespace krn {

/// Gradient per differentiated parameter. Scalar parameters use a
/// one-element view.
using Gradient = std::map<std::string, View>;

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every entry of
/// every `wrt` parameter. Each evaluation runs on a fresh copy of `inputs`.
Gradient finite_difference_gradient(const Program& program, const std::string& fn, const Inputs& inputs,
                                    const std::set<std::string>& wrt, double h = 1e-6,
                                    const ExecutionConfig& cfg = {});

/// Absolute error expected from rounding f(p +- h e_i) alone:
/// 4 eps max(|f|, 1) / h. Useful as an atol floor when |f| is large.
double fd_roundoff_floor(double f, double h);

/// Runs `<fn>_grad` from `differentiated` on fresh copies of `inputs` with
/// zeroed shadow parameters and returns the shadows of `wrt`.
Gradient run_gradient(const Program& differentiated, const std::string& fn, const Inputs& inputs,
                      const std::set<std::string>& wrt, const ExecutionConfig& cfg = {});

/// differentiate() followed by run_gradient().
Gradient ad_gradient(const Program& program, const std::string& fn, const Inputs& inputs,
                     const std::set<std::string>& wrt, const ExecutionConfig& cfg = {});

struct LaplacianResult {
  double f = 0.0;
  std::vector<double> grad_x;
  std::vector<double> grad_b;
};

/// f = |A(3x) - b|^2 with A = tridiag(-1, 2, -1), evaluated directly.
LaplacianResult laplacian_oracle(const std::vector<double>& x, const std::vector<double>& b);

struct GradientEntry {
  std::string param;
  std::vector<std::int64_t> index;
  double ad = 0.0;
  double reference = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  bool ok = true;
};

struct GradientReport {
  std::vector<GradientEntry> entries;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  double atol = 0.0;
  double rtol = 0.0;
  double step = 0.0;  // finite-difference step, 0 for analytic references
  bool pass = true;

  std::vector<GradientEntry> failures() const;
  /// Table, one row per entry; `limit` caps the rows (failures always shown).
  std::string format(std::size_t limit = 20) const;
};

/// Entry passes iff |ad - ref| <= atol + rtol |ref|.
GradientReport check_gradient(const Gradient& ad, const Gradient& reference, double atol = 1e-9,
                              double rtol = 1e-5);

/// Random inputs for `fn`: dynamic extents become `n`, values are uniform in
/// [-1, 1]. Views that appear inside subscripts get integers in [0, n).
Inputs random_inputs(const FunctionDef& fn, std::int64_t n, std::uint64_t seed);

struct BenchResult {
  std::int64_t n = 0;
  int threads = 1;
  int reps = 0;
  double primal_s = 0.0;
  double grad_s = 0.0;
  double ratio = 0.0;
};

/// Best-of-`reps` wall clock of the primal and of its gradient on identical
/// fresh inputs. Requires reps >= 3.
BenchResult bench_ratio(const Program& program, const std::string& fn, std::int64_t n, const ExecutionConfig& cfg,
                        int reps, std::uint64_t seed = 1);

}  // namespace krn
