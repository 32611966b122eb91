#include <algorithm>

#include "doctest.h"
#include "krn/analysis.hpp"
#include "krn/frontend.hpp"
#include "support.hpp"

using namespace krn;
using krn::test::load_corpus;

namespace {

FunctionDef one(const std::string& text) { return parse(text).functions.at(0); }

std::string kernel_fn(const std::string& body, const std::string& params = "x: view<f64, 1>, y: view<f64, 1>") {
  return "fn f(" + params + ") -> f64 {\n  parallel_for i in 0..extent(x, 0) {\n" + body +
         "\n  }\n  return parallel_sum(y);\n}\n";
}

bool subset(const std::set<std::string>& a, const std::set<std::string>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

TEST_CASE("activity of the laplacian example") {
  FunctionDef f = load_corpus("laplacian.krn").functions[0];
  ActivityResult a = activity(f, {"x", "b"});
  CHECK(a.views == std::set<std::string>{"x", "b", "y", "y2"});
  CHECK(a.scalars == std::set<std::string>{"sum"});

  ActivityResult none = activity(f, {});
  CHECK(none.views.empty());
  CHECK(none.scalars.empty());

  ActivityResult only_b = activity(f, {"b"});
  CHECK(only_b.views == std::set<std::string>{"b", "y", "y2"});
}

TEST_CASE("activity flows through a scalar into a view") {
  FunctionDef f = one(
      "fn f(y: view<f64, 1>, c: f64) -> f64 {\n"
      "  parallel_for j in 0..extent(y, 0) {\n"
      "    y(j) = c;\n"
      "  }\n"
      "  return parallel_sum(y);\n"
      "}\n");
  ActivityResult a = activity(f, {"c"});
  CHECK(a.views == std::set<std::string>{"y"});
  CHECK(a.scalar_active("c"));
}

TEST_CASE("subscripts never carry activity") {
  FunctionDef f = load_corpus("gather.krn").functions[0];
  ActivityResult a = activity(f, {"idx"});
  CHECK(a.views == std::set<std::string>{"idx"});
  CHECK_FALSE(a.view_active("t"));
}

TEST_CASE("activity rejects unknown parameters") {
  FunctionDef f = load_corpus("laplacian.krn").functions[0];
  CHECK_THROWS_AS(activity(f, {"q"}), Error);
  try {
    activity(f, {"y"});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownParameter);
  }
}

TEST_CASE("activity is monotone in wrt") {
  for (const auto& e : krn::test::corpus()) {
    FunctionDef f = load_corpus(e.file).functions[0];
    std::vector<std::string> params;
    for (const auto& p : f.params) params.push_back(p.name);
    std::size_t m = params.size();
    for (unsigned small = 0; small < (1u << m); ++small)
      for (unsigned big = small; big < (1u << m); big = (big + 1) | small) {
        std::set<std::string> ws, wb;
        for (std::size_t k = 0; k < m; ++k) {
          if (small >> k & 1) ws.insert(params[k]);
          if (big >> k & 1) wb.insert(params[k]);
        }
        ActivityResult as = activity(f, ws), ab = activity(f, wb);
        CAPTURE(e.file);
        CHECK(subset(as.views, ab.views));
        CHECK(subset(as.scalars, ab.scalars));
      }
  }
}

TEST_CASE("race analysis on the laplacian example") {
  FunctionDef f = load_corpus("laplacian.krn").functions[0];
  RaceResult r = race_analysis(f);
  CHECK(r.flagged_in(1).empty());
  CHECK(r.flagged_in(2) == std::set<std::string>{"x"});
  REQUIRE(r.flags.size() == 1);
  CHECK(r.flags[0].rule == RaceRule::DistinctIndices);
  CHECK(format_race_report(r) == "kernel#2 view=x rule=2 indices=[j, j - 1, j + 1]\n");
}

TEST_CASE("race rules") {
  SUBCASE("own index only") { CHECK(race_analysis(one(kernel_fn("    y(i) = x(i);"))).flags.empty()); }
  SUBCASE("repeated identical index") {
    CHECK(race_analysis(one(kernel_fn("    y(i) = x(i) * x(i);\n    y(i) += x(i);"))).flags.empty());
  }
  SUBCASE("commuted forms are one subscript") {
    CHECK(race_analysis(one(kernel_fn("    y(i) = x(i + 1) - x(1 + i);"))).flags.empty());
  }
  SUBCASE("indirect") {
    RaceResult r = race_analysis(
        one(kernel_fn("    y(i) = x(idx(i));", "x: view<f64, 1>, y: view<f64, 1>, idx: view<f64, 1>")));
    REQUIRE(r.flags.size() == 1);
    CHECK(r.flags[0].name == "x");
    CHECK(r.flags[0].rule == RaceRule::IndirectIndex);
  }
  SUBCASE("constant subscripts are not rule 2 but are rule 3") {
    RaceResult r = race_analysis(one(kernel_fn("    y(i) = x(0) + x(1);")));
    REQUIRE(r.flags.size() == 1);
    CHECK(r.flags[0].name == "x");
    CHECK(r.flags[0].rule == RaceRule::CounterFree);
  }
  SUBCASE("outer scalar read in a kernel") {
    RaceResult r = race_analysis(one(kernel_fn("    y(i) = c * x(i);", "x: view<f64, 1>, y: view<f64, 1>, c: f64")));
    REQUIRE(r.flags.size() == 1);
    CHECK(r.flags[0].name == "c");
    CHECK(r.flags[0].scalar);
    CHECK(r.flags[0].rule == RaceRule::CounterFree);
  }
  SUBCASE("kernel-local scalars are private") {
    CHECK(race_analysis(one(kernel_fn("    let t: f64 = x(i);\n    y(i) = t * t;"))).flags.empty());
  }
}

TEST_CASE("taping feasibility") {
  SUBCASE("laplacian is feasible") {
    FunctionDef f = load_corpus("laplacian.krn").functions[0];
    CHECK(taping_feasibility(f, activity(f, {"x", "b"})).ok);
  }
  SUBCASE("self overwrite with nonlinear use") {
    FunctionDef f = one(
        "fn f(x: view<f64, 1>) -> f64 {\n  parallel_for j in 0..extent(x, 0) {\n    x(j) = x(j) * x(j);\n  }\n"
        "  return parallel_sum(x);\n}\n");
    TapingVerdict v = taping_feasibility(f, activity(f, {"x"}));
    CHECK_FALSE(v.ok);
    REQUIRE(v.violations.size() == 1);
    CHECK(v.violations[0].name == "x");
    CHECK(v.violations[0].statement.line == 3);
  }
  SUBCASE("later fill clobbers a needed view") {
    FunctionDef f = one(
        "fn f(x: view<f64, 1>, y: view<f64, 1>) -> f64 {\n  parallel_for j in 0..extent(x, 0) {\n"
        "    y(j) = x(j) * x(j);\n  }\n  deep_copy(x, 0);\n  return parallel_sum(y);\n}\n");
    TapingVerdict v = taping_feasibility(f, activity(f, {"x"}));
    CHECK_FALSE(v.ok);
    REQUIRE_FALSE(v.violations.empty());
    CHECK(v.violations[0].name == "x");
    CHECK(v.violations[0].overwrite.line == 5);
  }
  SUBCASE("linear self update is fine") {
    FunctionDef f = one(
        "fn f(x: view<f64, 1>) -> f64 {\n  parallel_for j in 0..extent(x, 0) {\n    x(j) = 3 * x(j);\n  }\n"
        "  return parallel_sum(x);\n}\n");
    CHECK(taping_feasibility(f, activity(f, {"x"})).ok);
  }
  SUBCASE("a view used as a subscript may not change afterwards") {
    FunctionDef f = one(
        "fn f(x: view<f64, 1>, y: view<f64, 1>, idx: view<f64, 1>) -> f64 {\n"
        "  parallel_for j in 0..extent(x, 0) {\n    y(j) = 2 * x(idx(j));\n  }\n"
        "  deep_copy(idx, 0);\n  return parallel_sum(y);\n}\n");
    CHECK_FALSE(taping_feasibility(f, activity(f, {"x"})).ok);
  }
  SUBCASE("corpus programs are feasible") {
    for (const auto& e : krn::test::corpus()) {
      FunctionDef f = load_corpus(e.file).functions[0];
      CAPTURE(e.file);
      CHECK(taping_feasibility(f, activity(f, e.wrt)).ok);
    }
  }
}

TEST_CASE("partial references") {
  FunctionDef f = one(kernel_fn("    y(i) = 2 * x(i) + c * x(i) * x(i);", "x: view<f64, 1>, y: view<f64, 1>, c: f64"));
  const Expr& rhs = f.body[0].get<ParallelFor>()->body[0].get<AssignView>()->value;
  CHECK(partial_references(rhs, activity(f, {"x"})) == std::set<std::string>{"c", "x"});
  FunctionDef g = one(kernel_fn("    y(i) = 2 * x(i) - x(i + 1);"));
  const Expr& lin = g.body[0].get<ParallelFor>()->body[0].get<AssignView>()->value;
  CHECK(partial_references(lin, activity(g, {"x"})).empty());
}
