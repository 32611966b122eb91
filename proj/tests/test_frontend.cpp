#include <random>

#include "doctest.h"
#include "krn/adjoint.hpp"
#include "krn/frontend.hpp"
#include "krn/index_ops.hpp"
#include "krn/validate.hpp"
#include "support.hpp"

using namespace krn;
using krn::test::load_corpus;

namespace {

std::vector<Diagnostic> diagnostics_of(const std::string& text) { return validate(parse_unvalidated(text)); }

Index parse_index(const std::string& text) {
  // wrap the subscript in a throwaway kernel and pull it back out
  Program p = parse_unvalidated("fn f(x: view<f64, 1>, idx: view<f64, 1>) {\n"
                                "  parallel_for i in 0..extent(x, 0) {\n"
                                "    parallel_for j in 0..1 {\n"
                                "      x(" + text + ") = 0;\n    }\n  }\n}\n");
  const auto& outer = *p.functions[0].body[0].get<ParallelFor>();
  const auto& inner = *outer.body[0].get<ParallelFor>();
  return inner.body[0].get<AssignView>()->target.indices[0];
}

}  // namespace

TEST_CASE("validate accepts the laplacian example") {
  Program p = load_corpus("laplacian.krn");
  CHECK(validate(p).empty());
}

TEST_CASE("rank-1 view accessed with two subscripts gives one arity diagnostic") {
  auto d = diagnostics_of(
      "fn f(y: view<f64, 1>) -> f64 {\n"
      "  parallel_for i in 0..extent(y, 0) {\n"
      "    y(i, 0) = 1;\n"
      "  }\n"
      "  return parallel_sum(y);\n"
      "}\n");
  REQUIRE(d.size() == 1);
  CHECK(d[0].message.find("rank 1") != std::string::npos);
  CHECK(d[0].span.line == 3);
}

TEST_CASE("condition on a view value is rejected") {
  auto d = diagnostics_of(
      "fn f(x: view<f64, 1>) -> f64 {\n"
      "  parallel_for j in 0..extent(x, 0) {\n"
      "    if (x(j) > 0) {\n"
      "      x(j) = 2 * x(j);\n"
      "    }\n"
      "  }\n"
      "  return parallel_sum(x);\n"
      "}\n");
  REQUIRE(d.size() == 1);
  CHECK(d[0].message.find("active condition unsupported") != std::string::npos);
}

TEST_CASE("condition on a scalar is rejected") {
  auto d = diagnostics_of(
      "fn f(x: view<f64, 1>, c: f64) -> f64 {\n"
      "  let n: f64 = c;\n"
      "  parallel_for j in 0..extent(x, 0) {\n"
      "    if (j < n) {\n"
      "      x(j) = 0;\n"
      "    }\n"
      "  }\n"
      "  return parallel_sum(x);\n"
      "}\n");
  CHECK_FALSE(d.empty());
}

TEST_CASE("other structural rules") {
  SUBCASE("return must be last") {
    CHECK_FALSE(diagnostics_of("fn f(x: view<f64, 1>) -> f64 {\n  return 1;\n  deep_copy(x, 0);\n}\n").empty());
  }
  SUBCASE("shadowing a parameter") {
    CHECK_FALSE(diagnostics_of("fn f(x: view<f64, 1>) -> f64 {\n  let x: f64 = 1;\n  return x;\n}\n").empty());
  }
  SUBCASE("nested kernels") {
    CHECK_FALSE(diagnostics_of("fn f(x: view<f64, 1>) {\n  parallel_for i in 0..3 {\n"
                               "    parallel_for j in 0..3 {\n      x(j) = 1;\n    }\n  }\n}\n")
                    .empty());
  }
  SUBCASE("deep_copy inside a kernel") {
    CHECK_FALSE(diagnostics_of("fn f(x: view<f64, 1>) {\n  parallel_for i in 0..3 {\n"
                               "    deep_copy(x, 0);\n  }\n}\n")
                    .empty());
  }
  SUBCASE("non-affine subscript") {
    CHECK_FALSE(diagnostics_of("fn f(x: view<f64, 1>) {\n  parallel_for i in 0..3 {\n"
                               "    x(i * i) = 1;\n  }\n}\n")
                    .empty());
  }
  SUBCASE("duplicate function names") {
    CHECK_FALSE(diagnostics_of("fn f(x: view<f64, 1>) {\n}\nfn f(y: view<f64, 1>) {\n}\n").empty());
  }
  SUBCASE("unknown view") {
    CHECK_FALSE(diagnostics_of("fn f(x: view<f64, 1>) -> f64 {\n  return parallel_sum(z);\n}\n").empty());
  }
}

TEST_CASE("validation is idempotent over the corpus") {
  for (const auto& e : krn::test::corpus()) {
    Program p = load_corpus(e.file);
    CHECK(validate(p) == validate(p));
  }
  Program bad = parse_unvalidated("fn f(y: view<f64, 1>) {\n  parallel_for i in 0..3 {\n    y(i, i) = q;\n  }\n}\n");
  auto first = validate(bad);
  CHECK_FALSE(first.empty());
  CHECK(first == validate(bad));
}

TEST_CASE("free_counters") {
  CHECK(free_counters(parse_index("j + 1")) == std::set<std::string>{"j"});
  CHECK(free_counters(parse_index("extent(x, 0) - 1")).empty());
  CHECK(free_counters(parse_index("idx(i) + i")) == std::set<std::string>{"i"});
  CHECK(free_counters(parse_index("idx(j) + 2 * i")) == std::set<std::string>{"i", "j"});
}

TEST_CASE("index equivalence is affine") {
  CHECK(equivalent(parse_index("j + 1"), parse_index("1 + j")));
  CHECK(equivalent(parse_index("2 * (j + 1)"), parse_index("j + j + 2")));
  CHECK_FALSE(equivalent(parse_index("j + 1"), parse_index("j - 1")));
  CHECK(equivalent(parse_index("idx(j + 1)"), parse_index("idx(1 + j)")));
}

TEST_CASE("parse the laplacian example") {
  Program p = load_corpus("laplacian.krn");
  REQUIRE(p.functions.size() == 1);
  const FunctionDef& f = p.functions[0];
  CHECK(f.name == "normRes1DLaplacianSQ");
  CHECK(count_kernels(f.body) == 2);
  int sums = 0;
  walk_statements(f.body, [&](const Stmt& s) { sums += s.get<ParallelSum>() != nullptr; });
  CHECK(sums == 1);
}

TEST_CASE("minimal program") {
  Program p = parse("fn f(x: view<f64,1>) -> f64 { return parallel_sum(x); }");
  REQUIRE(p.functions.size() == 1);
  const auto& body = p.functions[0].body;
  REQUIRE(body.size() == 2);
  CHECK(body[0].get<ParallelSum>() != nullptr);
  CHECK(body[1].get<Return>() != nullptr);
}

TEST_CASE("malformed input reports the offending token") {
  try {
    parse("fn f( { ");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.span().begin == 6);
    CHECK(e.span().line == 1);
    CHECK(e.span().column == 7);
    CHECK_FALSE(e.expected().empty());
  }
}

TEST_CASE("parse surfaces validation failures") {
  CHECK_THROWS_AS(parse("fn f(x: view<f64, 1>) -> f64 { return parallel_sum(y); }"), ValidationError);
}

TEST_CASE("emit is canonical and idempotent") {
  Program p = load_corpus("laplacian.krn");
  std::string once = emit(p);
  std::string twice = emit(parse(once));
  CHECK(once == twice);
  CHECK(emit(Program{}).empty());
}

TEST_CASE("emitted deep_copy adjoint") {
  Program p = parse(
      "fn cp(a_view: view<f64, 1>, b_view: view<f64, 1>) -> f64 {\n"
      "  deep_copy(a_view, b_view);\n"
      "  return parallel_sum(a_view);\n"
      "}\n");
  std::string text = emit(differentiate(p, "cp", {"b_view"}).program);
  CHECK(text.find("parallel_for i in 0..extent(a_view, 0) {\n    _d_b_view(i) += _d_a_view(i);\n  }") !=
        std::string::npos);
}

TEST_CASE("round trip over the corpus and its gradients") {
  for (const auto& e : krn::test::corpus()) {
    CAPTURE(e.file);
    Program p = load_corpus(e.file);
    CHECK(parse(emit(p)) == p);
    Program d = differentiate(p, e.fn, e.wrt).program;
    CHECK(parse(emit(d)) == d);
  }
}

TEST_CASE("format_number round-trips doubles") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (double v : {0.0, 1.0, -2.5, 1e-300, 0.1, 3.0, 1e22, 2.6}) CHECK(std::stod(format_number(v)) == v);
  for (int i = 0; i < 1000; ++i) {
    double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    CHECK(std::stod(format_number(v)) == v);
  }
}

TEST_CASE("parse never crashes on arbitrary input") {
  std::mt19937_64 rng(2024);
  std::string base = krn::test::read_text(krn::test::corpus_path("laplacian.krn"));
  const std::string alphabet = "fnletviewparallel_forsum(){}[]<>=+-*/;:,.0123456789 \n\txjy!_\"";
  auto survives = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ParseError&) {
    } catch (const ValidationError&) {
    } catch (...) {
      return false;
    }
    return true;
  };
  for (int i = 0; i < 1500; ++i) {
    std::string text;
    if (i % 3 == 0) {
      std::size_t len = rng() % 200;
      for (std::size_t k = 0; k < len; ++k) text += static_cast<char>(rng() % 256);
    } else if (i % 3 == 1) {
      std::size_t len = rng() % 200;
      for (std::size_t k = 0; k < len; ++k) text += alphabet[rng() % alphabet.size()];
    } else {
      text = base;
      int edits = 1 + static_cast<int>(rng() % 4);
      for (int k = 0; k < edits && !text.empty(); ++k) {
        std::size_t pos = rng() % text.size();
        switch (rng() % 3) {
          case 0: text.erase(pos, 1 + rng() % 8); break;
          case 1: text.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
          default: text[pos] = static_cast<char>(rng() % 256); break;
        }
      }
    }
    CAPTURE(text);
    CHECK(survives(text));
  }
}
