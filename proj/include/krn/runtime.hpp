#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "krn/ast.hpp"

namespace krn {

/// Row-major array of doubles with reference semantics: copies share the
/// buffer, clone() makes an independent one. Element access is bounds
/// checked.
class View {
 public:
  View() = default;
  explicit View(std::vector<std::int64_t> extents);
  View(std::vector<std::int64_t> extents, std::vector<double> values);

  int rank() const { return static_cast<int>(extents_.size()); }
  std::int64_t extent(int dim) const { return extents_.at(static_cast<std::size_t>(dim)); }
  const std::vector<std::int64_t>& extents() const { return extents_; }
  std::size_t size() const { return buf_ ? buf_->size() : 0; }
  bool valid() const { return buf_ != nullptr; }

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }
  double& operator()(std::int64_t i);
  double& operator()(std::int64_t i, std::int64_t j);
  double operator()(std::int64_t i) const;
  double operator()(std::int64_t i, std::int64_t j) const;

  View clone() const;
  std::vector<double> values() const { return buf_ ? *buf_ : std::vector<double>{}; }
  bool shares_storage_with(const View& other) const { return buf_ && buf_ == other.buf_; }

 private:
  std::size_t offset(std::int64_t i, std::int64_t j, int arity) const;

  std::shared_ptr<std::vector<double>> buf_;
  std::vector<std::int64_t> extents_;
};

using Value = std::variant<double, View>;
using Inputs = std::map<std::string, Value>;

/// Deep copy of every view in `inputs` (scalars are copied by value).
Inputs clone_inputs(const Inputs& inputs);

struct ExecutionConfig {
  int threads = 1;
  bool deterministic_reduction = true;
  bool conflict_detect = false;
  std::uint64_t rng_seed = 0;  // iteration shuffle under conflict_detect
  bool check_finite = false;
};

/// cfg.threads, replaced by KRN_THREADS when that is set to a positive integer.
int effective_threads(const ExecutionConfig& cfg);

enum class AccessKind { Read, Write, AtomicWrite };
std::string to_string(AccessKind k);

struct Conflict {
  int kernel = 0;
  std::string view;  // scalars are reported under their own name, offset 0
  std::int64_t offset = 0;
  std::vector<std::int64_t> iterations;
  std::set<AccessKind> kinds;
};

struct ConflictReport {
  std::vector<Conflict> conflicts;

  bool empty() const { return conflicts.empty(); }
  std::set<std::int64_t> offsets(const std::string& view) const;
  std::string format() const;
};

struct ExecResult {
  std::optional<double> value;
  ConflictReport conflicts;
};

/// Compiles one function once so it can be run repeatedly.
class Interpreter {
 public:
  Interpreter(const Program& program, const std::string& fn);
  ~Interpreter();
  Interpreter(Interpreter&&) noexcept;
  Interpreter& operator=(Interpreter&&) noexcept;

  /// Binds parameters by name (views share storage with `inputs`) and runs.
  ExecResult run(Inputs& inputs, const ExecutionConfig& cfg = {});

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

ExecResult execute(const Program& program, const std::string& fn, Inputs& inputs, const ExecutionConfig& cfg = {});

/// Runs with conflict detection on: kernels execute sequentially in a
/// shuffled iteration order while every element access is logged.
ConflictReport detect_conflicts(const Program& program, const std::string& fn, Inputs& inputs,
                                ExecutionConfig cfg = {});

// Builtins, usable directly on views.
void atomic_add(double& location, double value);
/// Sum of all entries; `deterministic` selects the fixed blocked pairwise tree.
double parallel_sum(const View& src, bool deterministic = true);
void parallel_sum(View& dst, double value);      // broadcast-accumulate
void parallel_sum(View& dst, const View& src);   // elementwise accumulate

/// Blocked pairwise summation: blocks of kSumBlock summed left to right,
/// block sums combined by a balanced binary tree.
constexpr std::size_t kSumBlock = 512;
double pairwise_sum(const double* data, std::size_t n);

}  // namespace krn
