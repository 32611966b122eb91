#include <cmath>
#include <random>

#include "dense_oracle.hpp"
#include "doctest.h"
#include "krn/adjoint.hpp"
#include "krn/frontend.hpp"
#include "krn/verify.hpp"
#include "support.hpp"

using namespace krn;
using krn::test::load_corpus;

namespace {

Inputs laplacian_inputs(const std::vector<double>& x, const std::vector<double>& b) {
  auto n = static_cast<std::int64_t>(x.size());
  return {{"x", View({n}, x)}, {"b", View({n}, b)}};
}

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (double& d : v) d = u(rng);
  return v;
}

// Element-by-element relative agreement with no absolute slack.
bool close(const std::vector<double>& a, const std::vector<double>& b, double rtol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > rtol * std::abs(b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("dense oracle matches hand values") {
  auto o = test::dense_laplacian({1, 1, 1}, {0, 0, 0});
  CHECK(o.f == 18);
  CHECK(o.grad_x == std::vector<double>{36, -36, 36});
  CHECK(o.grad_b == std::vector<double>{-6, 0, -6});
  auto one = test::dense_laplacian({1}, {0});
  CHECK(one.f == 36);
  CHECK(one.grad_x == std::vector<double>{72});
  CHECK(one.grad_b == std::vector<double>{-12});
}

TEST_CASE("laplacian_oracle") {
  LaplacianResult r = laplacian_oracle({1, 1, 1}, {0, 0, 0});
  CHECK(r.f == 18);
  CHECK(r.grad_x == std::vector<double>{36, -36, 36});
  CHECK(r.grad_b == std::vector<double>{-6, 0, -6});

  LaplacianResult one = laplacian_oracle({1}, {0});
  CHECK(one.f == 36);
  CHECK(one.grad_x == std::vector<double>{72});
  CHECK(one.grad_b == std::vector<double>{-12});

  // x = 0: y = -b
  std::vector<double> b{0.5, -1, 2, 0.25};
  LaplacianResult z = laplacian_oracle(std::vector<double>(4, 0.0), b);
  CHECK(z.f == doctest::Approx(0.25 + 1 + 4 + 0.0625));
  auto dense = test::dense_laplacian(std::vector<double>(4, 0.0), b);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(z.grad_b[i] == 2 * b[i]);
    CHECK(z.grad_x[i] == doctest::Approx(dense.grad_x[i]));
  }
  CHECK_THROWS_AS(laplacian_oracle({1, 2}, {1}), Error);
}

TEST_CASE("library oracle agrees with the dense one") {
  std::mt19937_64 rng(3);
  for (std::size_t n : {1, 2, 5, 64}) {
    auto x = uniform(n, rng), b = uniform(n, rng);
    LaplacianResult r = laplacian_oracle(x, b);
    auto d = test::dense_laplacian(x, b);
    CHECK(close(r.grad_x, d.grad_x, 1e-13));
    CHECK(close(r.grad_b, d.grad_b, 1e-13));
  }
}

TEST_CASE("AD matches the dense oracle to 1e-12") {
  Program d = differentiate(load_corpus("laplacian.krn"), test::kLaplacianFn, {"x", "b"}).program;
  std::mt19937_64 rng(20260);
  for (std::size_t n : {1, 2, 3, 17, 1000})
    for (int draw = 0; draw < 10; ++draw) {
      auto x = uniform(n, rng), b = uniform(n, rng);
      Gradient g = run_gradient(d, test::kLaplacianFn, laplacian_inputs(x, b), {"x", "b"});
      auto ref = test::dense_laplacian(x, b);
      CAPTURE(n);
      CAPTURE(draw);
      CHECK(close(g.at("x").values(), ref.grad_x, 1e-12));
      CHECK(close(g.at("b").values(), ref.grad_b, 1e-12));
    }
}

TEST_CASE("finite differences") {
  Program lap = load_corpus("laplacian.krn");
  SUBCASE("laplacian n = 3") {
    Gradient g = finite_difference_gradient(lap, test::kLaplacianFn, laplacian_inputs({1, 1, 1}, {0, 0, 0}), {"x"});
    std::vector<double> expect{36, -36, 36};
    auto v = g.at("x").values();
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(v[i] - expect[i]) <= 1e-5 * 36);
  }
  SUBCASE("inputs are not mutated") {
    Inputs in = laplacian_inputs({1, 2}, {0, 0});
    finite_difference_gradient(lap, test::kLaplacianFn, in, {"x", "b"});
    CHECK(std::get<View>(in.at("x")).values() == std::vector<double>{1, 2});
  }
  SUBCASE("constant function") {
    Program p = parse("fn f(x: view<f64, 1>, b: view<f64, 1>) -> f64 {\n  return parallel_sum(b);\n}\n");
    Gradient g = finite_difference_gradient(p, "f", laplacian_inputs({1, 2, 3}, {4, 5, 6}), {"x"});
    CHECK(g.at("x").values() == std::vector<double>(3, 0.0));
  }
  SUBCASE("sum") {
    Program p = parse("fn f(x: view<f64, 1>) -> f64 {\n  return parallel_sum(x);\n}\n");
    Inputs in{{"x", View({4}, {0.25, -0.5, 0.75, 1})}};
    for (double v : finite_difference_gradient(p, "f", in, {"x"}).at("x").values())
      CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("scalar parameter") {
    Program p = load_corpus("fill_scalar.krn");
    Inputs in = random_inputs(p.functions[0], 5, 4);
    Gradient g = finite_difference_gradient(p, "fillMix", in, {"c"});
    CHECK(g.at("c").size() == 1);
  }
  SUBCASE("bad step") {
    CHECK_THROWS_AS(finite_difference_gradient(lap, test::kLaplacianFn, laplacian_inputs({1}, {1}), {"x"}, 0.0),
                    Error);
  }
}

TEST_CASE("AD matches finite differences on every corpus program") {
  for (const auto& e : test::corpus())
    for (std::int64_t n : {1, 4, 12})
      for (std::uint64_t seed : {1u, 2u}) {
        CAPTURE(e.file);
        CAPTURE(n);
        CAPTURE(seed);
        Program p = load_corpus(e.file);
        Inputs in = random_inputs(*p.find(e.fn), n, seed);
        Gradient ad = ad_gradient(p, e.fn, in, e.wrt);
        Gradient fd = finite_difference_gradient(p, e.fn, in, e.wrt, 1e-6);
        GradientReport rep = check_gradient(ad, fd, 1e-9, 1e-5);
        CHECK_MESSAGE(rep.pass, rep.format());
      }
}

TEST_CASE("check_gradient") {
  Gradient a{{"x", View({3}, {36, -36, 36})}};
  SUBCASE("identical") {
    GradientReport r = check_gradient(a, a);
    CHECK(r.pass);
    CHECK(r.max_rel_error == 0);
    CHECK(r.entries.size() == 3);
  }
  SUBCASE("one entry off by 1%") {
    Gradient b{{"x", View({3}, {36, -36 * 1.01, 36})}};
    GradientReport r = check_gradient(a, b);
    CHECK_FALSE(r.pass);
    REQUIRE(r.failures().size() == 1);
    CHECK(r.failures()[0].index == std::vector<std::int64_t>{1});
    CHECK(r.format().find("FAIL") != std::string::npos);
  }
  SUBCASE("tolerance rule is atol + rtol |ref|") {
    Gradient b{{"x", View({3}, {36 + 1e-3, -36, 36})}};
    CHECK_FALSE(check_gradient(a, b, 0, 1e-5).pass);
    CHECK(check_gradient(a, b, 1e-3, 1e-5).pass);
    CHECK(check_gradient(a, b, 0, 3e-5).pass);
  }
  SUBCASE("shape mismatch") {
    Gradient b{{"x", View({2}, {36, -36})}};
    CHECK_THROWS_AS(check_gradient(a, b), Error);
    Gradient c{{"y", View({3})}};
    CHECK_THROWS_AS(check_gradient(a, c), Error);
  }
}

TEST_CASE("fd roundoff floor scales with |f| / h") {
  CHECK(fd_roundoff_floor(0, 1e-6) == doctest::Approx(4 * 2.220446049250313e-16 / 1e-6));
  CHECK(fd_roundoff_floor(1e4, 1e-6) == doctest::Approx(1e4 * fd_roundoff_floor(1, 1e-6)));
}

TEST_CASE("seed scales the gradient exactly") {
  Program p = load_corpus("laplacian.krn");
  std::mt19937_64 rng(8);
  Inputs in = laplacian_inputs(uniform(40, rng), uniform(40, rng));
  Gradient base = run_gradient(differentiate(p, test::kLaplacianFn, {"x", "b"}).program, test::kLaplacianFn, in,
                               {"x", "b"});
  for (double c : {0.5, 2.0, -1.0}) {
    DiffOptions opt;
    opt.seed = c;
    Gradient g = run_gradient(differentiate(p, test::kLaplacianFn, {"x", "b"}, opt).program, test::kLaplacianFn, in,
                              {"x", "b"});
    for (const auto& [name, v] : g) {
      auto got = v.values(), ref = base.at(name).values();
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == c * ref[i]);
    }
  }
}

TEST_CASE("running the gradient twice accumulates exactly twice") {
  for (const auto& e : test::corpus()) {
    CAPTURE(e.file);
    DiffResult d = differentiate(load_corpus(e.file), e.fn, e.wrt);
    const FunctionDef& primal = *d.program.find(e.fn);
    const FunctionDef& g = *d.program.find(d.plan.gradient);
    Inputs base = random_inputs(primal, 7, 3);
    std::map<std::string, View> shadows;
    for (std::size_t k = primal.params.size(); k < g.params.size(); ++k) {
      std::vector<std::int64_t> ext;
      for (const auto& dim : g.params[k].view->extents) ext.push_back(dim.value_or(7));
      shadows[g.params[k].name] = View(ext);
    }
    Interpreter interp(d.program, d.plan.gradient);
    std::map<std::string, std::vector<double>> once;
    for (int pass = 0; pass < 2; ++pass) {
      Inputs in = clone_inputs(base);  // primal views are mutated by the forward pass
      for (auto& [name, v] : shadows) in[name] = v;
      interp.run(in);
      if (pass == 0)
        for (auto& [name, v] : shadows) once[name] = v.values();
    }
    for (auto& [name, v] : shadows) {
      auto twice = v.values();
      for (std::size_t i = 0; i < twice.size(); ++i) CHECK(twice[i] == 2 * once[name][i]);
    }
  }
}

TEST_CASE("random inputs") {
  Program p = load_corpus("gather.krn");
  Inputs a = random_inputs(p.functions[0], 10, 42), b = random_inputs(p.functions[0], 10, 42);
  CHECK(std::get<View>(a.at("x")).values() == std::get<View>(b.at("x")).values());
  for (double v : std::get<View>(a.at("idx")).values()) {
    CHECK(v == std::floor(v));
    CHECK(v >= 0);
    CHECK(v < 10);
  }
  for (double v : std::get<View>(a.at("w")).values()) CHECK(std::abs(v) <= 1);
  Program s = load_corpus("stencil2d.krn");
  View u = std::get<View>(random_inputs(s.functions[0], 6, 1).at("u"));
  CHECK(u.extents() == std::vector<std::int64_t>{6, 3});
}

TEST_CASE("bench_ratio") {
  Program p = load_corpus("laplacian.krn");
  BenchResult r = bench_ratio(p, test::kLaplacianFn, 1, {}, 3);
  CHECK(r.n == 1);
  CHECK(r.reps == 3);
  CHECK(r.primal_s > 0);
  CHECK(r.grad_s > 0);
  CHECK(std::isfinite(r.ratio));
  CHECK(r.ratio == doctest::Approx(r.grad_s / r.primal_s));
  CHECK_THROWS_AS(bench_ratio(p, test::kLaplacianFn, 10, {}, 2), Error);
}
