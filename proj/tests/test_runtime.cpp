#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <mutex>

#include "doctest.h"
#include "krn/adjoint.hpp"
#include "krn/frontend.hpp"
#include "krn/runtime.hpp"
#include "krn/tensor_io.hpp"
#include "krn/thread_pool.hpp"
#include "krn/verify.hpp"
#include "support.hpp"

using namespace krn;
using krn::test::load_corpus;

namespace {

Inputs laplacian_inputs(std::vector<double> x, std::vector<double> b) {
  auto n = static_cast<std::int64_t>(x.size());
  return {{"x", View({n}, std::move(x))}, {"b", View({n}, std::move(b))}};
}

const View& view_of(const Inputs& in, const std::string& name) { return std::get<View>(in.at(name)); }

ErrorKind kind_of(const std::function<void()>& call) {
  try {
    call();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::Io;
}

struct ScopedEnv {
  std::string name;
  ScopedEnv(std::string n, const char* value) : name(std::move(n)) { ::setenv(name.c_str(), value, 1); }
  ~ScopedEnv() { ::unsetenv(name.c_str()); }
};

}  // namespace

TEST_CASE("View basics") {
  View v({2, 3});
  CHECK(v.rank() == 2);
  CHECK(v.size() == 6);
  v(1, 2) = 5;
  CHECK(v.data()[5] == 5);
  View alias = v;
  alias(0, 0) = 1;
  CHECK(v(0, 0) == 1);
  View copy = v.clone();
  copy(0, 0) = 9;
  CHECK(v(0, 0) == 1);
  CHECK(alias.shares_storage_with(v));
  CHECK_FALSE(copy.shares_storage_with(v));
  CHECK_THROWS_AS(v(2, 0), Error);
  CHECK_THROWS_AS(v(0), Error);
  CHECK_THROWS_AS(View({2}, {1.0, 2.0, 3.0}), Error);
}

TEST_CASE("laplacian primal and gradient on n = 3") {
  Program p = load_corpus("laplacian.krn");
  Inputs in = laplacian_inputs({1, 1, 1}, {0, 0, 0});
  ExecResult r = execute(p, test::kLaplacianFn, in);
  REQUIRE(r.value);
  CHECK(*r.value == 18.0);
  CHECK(view_of(in, "x").values() == std::vector<double>{3, 3, 3});

  Program d = differentiate(p, test::kLaplacianFn, {"x", "b"}).program;
  Inputs g = laplacian_inputs({1, 1, 1}, {0, 0, 0});
  g["_d_x"] = View({3});
  g["_d_b"] = View({3});
  ExecResult gr = execute(d, "normRes1DLaplacianSQ_grad", g);
  CHECK_FALSE(gr.value);
  CHECK(view_of(g, "_d_x").values() == std::vector<double>{36, -36, 36});
  CHECK(view_of(g, "_d_b").values() == std::vector<double>{-6, 0, -6});
  CHECK(view_of(g, "x").values() == std::vector<double>{3, 3, 3});
}

TEST_CASE("empty kernel changes nothing") {
  Program p = parse("fn f(x: view<f64, 1>) {\n  parallel_for i in 0..extent(x, 0) {\n  }\n}\n");
  Inputs in{{"x", View({4}, {1, 2, 3, 4})}};
  for (int t : {1, 3}) {
    ExecutionConfig cfg;
    cfg.threads = t;
    execute(p, "f", in, cfg);
    CHECK(view_of(in, "x").values() == std::vector<double>{1, 2, 3, 4});
  }
}

TEST_CASE("atomic_add under contention is exact") {
  double target = 0;
  ThreadPool pool(4);
  pool.run([&](int) {
    for (int k = 0; k < 1000; ++k) atomic_add(target, 1.0);
  });
  CHECK(target == 4000.0);

  Program p = parse(
      "fn f(x: view<f64, 1>, acc: view<f64, 1>) {\n  parallel_for i in 0..extent(x, 0) {\n"
      "    atomic_add(acc(0), x(i));\n  }\n}\n");
  std::vector<double> ones(4000, 1.0);
  for (bool det : {true, false}) {
    Inputs in{{"x", View({4000}, ones)}, {"acc", View({1})}};
    ExecutionConfig cfg;
    cfg.threads = 4;
    cfg.deterministic_reduction = det;
    execute(p, "f", in, cfg);
    CHECK(view_of(in, "acc")(0) == 4000.0);
  }
}

TEST_CASE("reverse laplacian kernel on n = 2 matches sequential execution") {
  Program d = differentiate(load_corpus("laplacian.krn"), test::kLaplacianFn, {"x", "b"}).program;
  auto run = [&](int threads, bool det) {
    Inputs in = laplacian_inputs({0.3, -0.7}, {0.1, 0.2});
    in["_d_x"] = View({2});
    in["_d_b"] = View({2});
    ExecutionConfig cfg;
    cfg.threads = threads;
    cfg.deterministic_reduction = det;
    execute(d, "normRes1DLaplacianSQ_grad", in, cfg);
    return std::make_pair(view_of(in, "_d_x").values(), view_of(in, "_d_b").values());
  };
  auto seq = run(1, true);
  CHECK(run(8, true) == seq);
  auto loose = run(8, false);
  for (std::size_t i = 0; i < 2; ++i) CHECK(loose.first[i] == doctest::Approx(seq.first[i]).epsilon(1e-12));
}

TEST_CASE("parallel_sum builtin forms") {
  CHECK(parallel_sum(View({3}, {1, 2, 3})) == 6.0);
  CHECK(parallel_sum(View({3}, {1, 2, 3}), false) == 6.0);
  View ones({5});
  parallel_sum(ones, 1.0);
  CHECK(ones.values() == std::vector<double>(5, 1.0));
  View a({2}, {1, 1});
  parallel_sum(a, View({2}, {2, 3}));
  CHECK(a.values() == std::vector<double>{3, 4});
  View m({2, 2});
  parallel_sum(m, 0.5);
  CHECK(parallel_sum(m) == 2.0);
  CHECK_THROWS_AS(parallel_sum(a, View({3})), Error);
  CHECK(kind_of([&] { parallel_sum(a, View({1, 2})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("pairwise sum is exact on integers and independent of threads") {
  std::vector<double> v(100000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i % 7);
  double expect = 0;
  for (double d : v) expect += d;
  CHECK(pairwise_sum(v.data(), v.size()) == expect);

  Program p = parse("fn f(x: view<f64, 1>) -> f64 {\n  return parallel_sum(x);\n}\n");
  std::vector<double> r(50000);
  std::uint64_t s = 99;
  for (double& d : r) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    d = static_cast<double>(s >> 11) * 0x1.0p-53 - 0.5;
  }
  double first = 0;
  for (int t : {1, 2, 3, 8}) {
    Inputs in{{"x", View({50000}, r)}};
    ExecutionConfig cfg;
    cfg.threads = t;
    double got = *execute(p, "f", in, cfg).value;
    if (t == 1) first = got;
    CHECK(got == first);
  }
  CHECK(first == pairwise_sum(r.data(), r.size()));
}

TEST_CASE("conflict detection") {
  DiffResult dr = differentiate(load_corpus("laplacian.krn"), test::kLaplacianFn, {"x", "b"});
  auto grad_inputs = [](std::int64_t n) {
    std::vector<double> x(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      x[static_cast<std::size_t>(i)] = 0.1 * static_cast<double>(i + 1);
      b[static_cast<std::size_t>(i)] = 1.0 - 0.2 * static_cast<double>(i);
    }
    Inputs in = laplacian_inputs(x, b);
    in["_d_x"] = View({n});
    in["_d_b"] = View({n});
    return in;
  };

  SUBCASE("intact gradient is clean") {
    Inputs in = grad_inputs(4);
    CHECK(detect_conflicts(dr.program, dr.plan.gradient, in).empty());
  }
  SUBCASE("stripped atomics collide on every entry of _d_x") {
    Program stripped = strip_atomics(dr.program, dr.plan.gradient, {"_d_x"});
    Inputs in = grad_inputs(4);
    ConflictReport rep = detect_conflicts(stripped, dr.plan.gradient, in);
    REQUIRE_FALSE(rep.empty());
    // iteration j writes _d_x(j-1), _d_x(j), _d_x(j+1): every offset is hit
    // by at least two iterations when n = 4.
    CHECK(rep.offsets("_d_x") == std::set<std::int64_t>{0, 1, 2, 3});
    for (const Conflict& c : rep.conflicts) {
      CHECK(c.view == "_d_x");
      CHECK(c.iterations.size() >= 2);
      CHECK(c.kinds.count(AccessKind::Write) == 1);
    }
    CHECK(rep.format().find("_d_x") != std::string::npos);

    // the result is still correct because detection runs sequentially
    Inputs ref = grad_inputs(4);
    execute(dr.program, dr.plan.gradient, ref);
    CHECK(view_of(in, "_d_x").values() == view_of(ref, "_d_x").values());
  }
  SUBCASE("independent of the shuffle seed") {
    Program stripped = strip_atomics(dr.program, dr.plan.gradient, {"_d_x"});
    std::set<std::int64_t> first;
    for (std::uint64_t seed : {0u, 1u, 77u}) {
      Inputs in = grad_inputs(6);
      ExecutionConfig cfg;
      cfg.rng_seed = seed;
      auto offs = detect_conflicts(stripped, dr.plan.gradient, in, cfg).offsets("_d_x");
      if (first.empty()) first = offs;
      CHECK(offs == first);
    }
  }
  SUBCASE("one access per view at its own index is clean") {
    Program p = parse(
        "fn f(x: view<f64, 1>, y: view<f64, 1>) {\n  parallel_for i in 0..extent(x, 0) {\n"
        "    y(i) = 2 * x(i);\n  }\n}\n");
    Inputs in{{"x", View({8})}, {"y", View({8})}};
    CHECK(detect_conflicts(p, "f", in).empty());
  }
  SUBCASE("indirect scatter with repeated targets") {
    Program p = parse(
        "fn f(x: view<f64, 1>, y: view<f64, 1>, idx: view<f64, 1>) {\n  parallel_for i in 0..extent(x, 0) {\n"
        "    y(idx(i)) += x(i);\n  }\n}\n");
    Inputs in{{"x", View({4}, {1, 2, 3, 4})}, {"y", View({4})}, {"idx", View({4})}};
    ConflictReport rep = detect_conflicts(p, "f", in);
    CHECK(rep.offsets("y") == std::set<std::int64_t>{0});
    CHECK(view_of(in, "y")(0) == 10.0);
  }
}

TEST_CASE("corpus gradients are conflict free with atomics intact") {
  for (const auto& e : test::corpus()) {
    CAPTURE(e.file);
    DiffResult d = differentiate(load_corpus(e.file), e.fn, e.wrt);
    const FunctionDef& g = *d.program.find(d.plan.gradient);
    Inputs in = random_inputs(*d.program.find(e.fn), 9, 5);
    for (std::size_t k = d.program.find(e.fn)->params.size(); k < g.params.size(); ++k) {
      const Param& sp = g.params[k];
      std::vector<std::int64_t> ext;
      for (std::size_t dim = 0; dim < sp.view->extents.size(); ++dim)
        ext.push_back(sp.view->extents[dim].value_or(9));
      in[sp.name] = View(ext);
    }
    CHECK(detect_conflicts(d.program, d.plan.gradient, in).empty());
  }
}

TEST_CASE("gradients are schedule independent") {
  for (const auto& e : test::corpus()) {
    CAPTURE(e.file);
    Program d = differentiate(load_corpus(e.file), e.fn, e.wrt).program;
    Inputs in = random_inputs(*d.find(e.fn), 300, 11);
    Gradient base;
    for (int t : {1, 2, 3, 8}) {
      ExecutionConfig cfg;
      cfg.threads = t;
      Gradient g = run_gradient(d, e.fn, in, e.wrt, cfg);
      if (t == 1) base = g;
      for (const auto& [name, v] : g) CHECK(v.values() == base.at(name).values());
    }
    ExecutionConfig loose;
    loose.threads = 4;
    loose.deterministic_reduction = false;
    Gradient g = run_gradient(d, e.fn, in, e.wrt, loose);
    for (const auto& [name, v] : g) {
      auto a = v.values(), b = base.at(name).values();
      for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::abs(a[i] - b[i]) <= 1e-12 * std::max(1.0, std::abs(b[i])));
    }
  }
}

TEST_CASE("runtime errors") {
  Program p = load_corpus("laplacian.krn");
  SUBCASE("missing input") {
    Inputs in{{"x", View({3})}};
    CHECK(kind_of([&] { execute(p, test::kLaplacianFn, in); }) == ErrorKind::InvalidArgument);
  }
  SUBCASE("unknown input") {
    Inputs in = laplacian_inputs({1}, {1});
    in["z"] = 1.0;
    CHECK(kind_of([&] { execute(p, test::kLaplacianFn, in); }) == ErrorKind::InvalidArgument);
  }
  SUBCASE("rank mismatch") {
    Inputs in{{"x", View({3})}, {"b", View({3, 1})}};
    CHECK(kind_of([&] { execute(p, test::kLaplacianFn, in); }) == ErrorKind::ShapeMismatch);
  }
  SUBCASE("out of bounds") {
    Inputs in{{"x", View({3})}, {"b", View({2})}};
    CHECK(kind_of([&] { execute(p, test::kLaplacianFn, in); }) == ErrorKind::OutOfBounds);
  }
  SUBCASE("non-finite guard") {
    Program q = parse("fn f(x: view<f64, 1>, c: f64) -> f64 {\n  parallel_for i in 0..extent(x, 0) {\n"
                      "    x(i) = x(i) / c;\n  }\n  return parallel_sum(x);\n}\n");
    Inputs in{{"x", View({2}, {1, 1})}, {"c", 0.0}};
    ExecutionConfig cfg;
    CHECK(std::isinf(*execute(q, "f", in, cfg).value));
    cfg.check_finite = true;
    Inputs again{{"x", View({2}, {1, 1})}, {"c", 0.0}};
    CHECK(kind_of([&] { execute(q, "f", again, cfg); }) == ErrorKind::NonFinite);
  }
  SUBCASE("unknown function") {
    Inputs in;
    CHECK(kind_of([&] { execute(p, "nope", in); }) == ErrorKind::UnknownFunction);
  }
}

TEST_CASE("KRN_THREADS overrides the configured thread count") {
  ExecutionConfig cfg;
  cfg.threads = 2;
  CHECK(effective_threads(cfg) == 2);
  {
    ScopedEnv env("KRN_THREADS", "5");
    CHECK(effective_threads(cfg) == 5);
  }
  {
    ScopedEnv env("KRN_THREADS", "zero");
    CHECK(effective_threads(cfg) == 2);
  }
}

TEST_CASE("thread pool chunks cover the range") {
  for (std::int64_t n : {0, 1, 7, 100})
    for (int parts : {1, 3, 8}) {
      std::int64_t covered = 0, prev = 0;
      for (int t = 0; t < parts; ++t) {
        auto [lo, hi] = ThreadPool::chunk(n, t, parts);
        CHECK(lo == prev);
        covered += hi - lo;
        prev = hi;
      }
      CHECK(covered == n);
    }
  ThreadPool pool(3);
  CHECK_THROWS_AS(pool.run([](int t) {
    if (t == 2) throw std::runtime_error("boom");
  }),
                  std::runtime_error);
  int hits = 0;
  std::mutex mu;
  pool.run([&](int) {
    std::lock_guard<std::mutex> lock(mu);
    ++hits;
  });
  CHECK(hits == 3);
}

TEST_CASE("tensor files") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "krn_tensor_test";
  fs::create_directories(dir);
  View m({2, 3}, {1, -2.5, 3, 0.1, 1e-300, 7});
  for (const char* name : {"m.txt", "m.bin"}) {
    std::string path = (dir / name).string();
    write_tensor(path, m);
    View back = read_tensor(path);
    CHECK(back.extents() == m.extents());
    CHECK(back.values() == m.values());
  }
  CHECK(format_tensor(View({3}, {1, 2, 3})) == "f64 1 3\n1 2 3\n");
  CHECK(parse_tensor("f64 2 2 1\n4\n5\n").values() == std::vector<double>{4, 5});
  CHECK(kind_of([] { parse_tensor("f64 1 3\n1 2\n"); }) == ErrorKind::Io);
  CHECK(kind_of([] { parse_tensor("f32 1 1\n1\n"); }) == ErrorKind::Io);
  CHECK(kind_of([] { parse_tensor("f64 1 1\nabc\n"); }) == ErrorKind::Io);
  CHECK(kind_of([&] { read_tensor((dir / "missing.txt").string()); }) == ErrorKind::Io);
  fs::remove_all(dir);
}
