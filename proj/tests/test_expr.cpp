#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sfl/expr.hpp"

using namespace sfl;

TEST_CASE("parse produces the expected tree shapes") {
  Expr s = parse("sin(x)");
  CHECK(s.kind() == Expr::Kind::Apply);
  CHECK(s.op() == Op::Sin);
  CHECK(s.child(0).kind() == Expr::Kind::Variable);
  CHECK(s.child(0).var() == Var::X);

  // left association: ((x^3 + x) + 1)
  Expr c = parse("x^3 + x + 1");
  REQUIRE(c.op() == Op::Add);
  CHECK(c.child(1).value() == 1.0);
  Expr inner = c.child(0);
  REQUIRE(inner.op() == Op::Add);
  CHECK(inner.child(0).op() == Op::PowInt);
  CHECK(inner.child(0).pow_exponent() == 3);
  CHECK(inner.child(0).child(0).var() == Var::X);
  CHECK(inner.child(1).var() == Var::X);

  Expr g = parse("y2 + (2/x)*y1 + y^0");
  CHECK(uses_var(g, Var::D2Y));
  CHECK(uses_var(g, Var::DY));
  CHECK(uses_var(g, Var::Y));
  CHECK(uses_var(g, Var::X));
}

TEST_CASE("eval matches hand arithmetic") {
  Expr m0_true = parse("1 - x^2/6");
  CHECK(eval(m0_true, 0.0) == 1.0);

  Expr m0_learned = parse("1.000 - 0.166*x^2");
  CHECK(eval(m0_learned, 1.0) == doctest::Approx(0.834).epsilon(1e-12));

  Expr sinc = parse("sin(x)/x");
  CHECK(eval(sinc, M_PI) == doctest::Approx(0.0).epsilon(1e-15));

  CHECK(eval(parse("pi"), 0.0) == doctest::Approx(M_PI));
}

TEST_CASE("grammar precedence") {
  CHECK(eval(parse("2+3*4"), 0.0) == 14.0);
  // '^' binds tighter than unary minus
  CHECK(eval(parse("-x^2"), 2.0) == -4.0);
  CHECK(eval(parse("2*3^2"), 0.0) == 18.0);
  CHECK(eval(parse("-2^2"), 0.0) == -4.0);
  CHECK(eval(parse("(1+2)*4"), 0.0) == 12.0);
  CHECK(eval(parse("8/4/2"), 0.0) == 1.0);
  CHECK(eval(parse("8-4-2"), 0.0) == 2.0);
  CHECK(eval(parse("x^-2"), 2.0) == doctest::Approx(0.25));
}

TEST_CASE("parse errors carry an offset and a reason") {
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("sin(x"), ParseError);
  CHECK_THROWS_AS(parse("x +"), ParseError);
  CHECK_THROWS_AS(parse("foo(x)"), ParseError);
  CHECK_THROWS_AS(parse("x ^ y"), ParseError);    // non-integer exponent
  CHECK_THROWS_AS(parse("x ^ 1.5"), ParseError);  // non-integer exponent
  CHECK_THROWS_AS(parse("x^99"), ParseError);     // exponent out of range
  try {
    parse("2 + @");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 4);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("differentiate of the basic forms") {
  Expr ds = simplify(differentiate(parse("sin(x)")), 0.0);
  CHECK(ds.kind() == Expr::Kind::Apply);
  CHECK(ds.op() == Op::Cos);

  // d/dx (1 - x^2/6) = -x/3, checked by value on a grid
  Expr d1 = differentiate(parse("1 - x^2/6"));
  for (double x : {-2.0, -0.5, 0.0, 1.0, 3.0})
    CHECK(eval(d1, x) == doctest::Approx(-x / 3.0).epsilon(1e-12));

  // second derivative of the learned m=0 expression folds to a constant
  Expr d2 = simplify(differentiate(differentiate(parse("1.000 - 0.166*x^2"))));
  REQUIRE(d2.kind() == Expr::Kind::Constant);
  CHECK(d2.value() == doctest::Approx(-0.332).epsilon(1e-12));
}

TEST_CASE("differentiate handles the guarded primitives") {
  // d sqrt(|v|+eps) = sign(v) / (2 sqrt(|v|+eps))
  Expr e = differentiate(parse("sqrt(x)"));
  double x = 4.0;
  CHECK(eval(e, x) == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(eval(e, -4.0) == doctest::Approx(-0.25).epsilon(1e-9));

  Expr l = differentiate(parse("log(x)"));
  CHECK(eval(l, 2.0) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(eval(l, -2.0) == doctest::Approx(-0.5).epsilon(1e-9));

  Expr a = differentiate(parse("abs(x)"));
  CHECK(eval(a, 3.0) == doctest::Approx(1.0));
  CHECK(eval(a, -3.0) == doctest::Approx(-1.0));
}

TEST_CASE("simplify examples") {
  Expr i = simplify(identity(identity(Expr::variable(Var::X))));
  CHECK(i.kind() == Expr::Kind::Variable);

  Expr x = Expr::variable(Var::X);
  Expr noisy = Expr::constant(1.0) * sin(x) + Expr::constant(4e-7) * x;
  CHECK(to_string(simplify(noisy, 1e-6)) == "sin(x)");

  Expr folded = simplify(Expr::constant(0.5) * (Expr::constant(2.0) * x) +
                         Expr::constant(3.0) - Expr::constant(3.0));
  CHECK(to_string(folded) == "x");
}

TEST_CASE("simplify is value-preserving on sampled points") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> xs(-4.0, 4.0);
  for (int trial = 0; trial < 300; ++trial) {
    Expr e = oracles::random_expr(rng, 4);
    double tol = trial % 2 == 0 ? 0.0 : 1e-6;
    Expr s = simplify(e, tol);
    // the tolerance bound is relative to the expression's scale, since a
    // dropped sub-tolerance term shifts every point by up to tol*scale
    std::vector<double> pts(30);
    double scale = 0.0;
    for (double& x : pts) {
      x = xs(rng);
      double a = eval(e, x);
      if (std::isfinite(a) && std::abs(a) <= 1e12)
        scale = std::max(scale, std::abs(a));
    }
    for (double x : pts) {
      double a = eval(e, x), b = eval(s, x);
      if (!std::isfinite(a) || std::abs(a) > 1e12) continue;
      CHECK(std::abs(a - b) <= 1e-6 * (1.0 + scale));
    }
  }
}

TEST_CASE("to_string formatting") {
  CHECK(to_string(Expr::constant(0.16600001), 3) == "0.166");

  Expr x = Expr::variable(Var::X);
  CHECK(to_string(x * x) == "x*x");

  Expr table2 = Expr::constant(0.938) * x *
                sin(sqrt_abs(Expr::constant(0.494) * x));
  CHECK(to_string(table2, 3) == "0.938*x*sin(sqrt(0.494*x))");

  // parenthesization keeps precedence intact
  CHECK(to_string(parse("(x+1)*(x-1)")) == "(x + 1)*(x - 1)");
  CHECK(to_string(parse("x-(x-1)")) == "x - (x - 1)");
  CHECK(to_string(parse("-(x+1)")) == "-(x + 1)");
  CHECK(to_string(parse("x^2")) == "x^2");
}

TEST_CASE("round trip: print then parse preserves values") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> xs(-4.0, 4.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Expr e = oracles::random_expr(rng, 6);
    Expr back = parse(to_string(e, 12));
    for (int i = 0; i < 50; ++i) {
      double x = xs(rng);
      double a = eval(e, x), b = eval(back, x);
      if (!std::isfinite(a) || std::abs(a) > 1e12) continue;
      CHECK(std::abs(a - b) <= 1e-9 * (1.0 + std::abs(a)));
    }
  }
}

TEST_CASE("differentiate agrees with finite differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> xs(-3.0, 3.0);
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    Expr e = oracles::random_expr(rng, 4);
    Expr de = differentiate(e);
    auto f = [&](double x) { return eval(e, x); };
    for (int i = 0; i < 10; ++i) {
      double x = xs(rng);
      if (!oracles::singularity_free(e, x)) continue;
      if (!oracles::fd_trustworthy(f, x)) continue;
      double want = oracles::central_diff(f, x);
      double got = eval(de, x);
      if (std::abs(want) > 1e8) continue;
      ++checked;
      CHECK(std::abs(got - want) <= 1e-5 * (1.0 + std::abs(want)));
    }
  }
  // the kink filter must not eat the whole sample
  CHECK(checked > 2000);
}

TEST_CASE("substitute swaps variables for subtrees") {
  Expr p = parse("x^3 + x + 1");
  Expr in_y = substitute(p, Var::X, Expr::variable(Var::Y));
  CHECK(!uses_var(in_y, Var::X));
  CHECK(uses_var(in_y, Var::Y));
  EvalPoint pt{0.0, 2.0, 0.0, 0.0};
  CHECK(eval(in_y, pt) == 11.0);
}

TEST_CASE("constants must be finite and exponents bounded") {
  CHECK_THROWS_AS(Expr::constant(std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(Expr::constant(INFINITY), std::invalid_argument);
  CHECK_THROWS_AS(pow_int(Expr::variable(Var::X), 17), std::invalid_argument);
  CHECK_THROWS_AS(Expr::apply(Op::Sin, {}), std::invalid_argument);
  CHECK_THROWS_AS(
      Expr::apply(Op::Add, {Expr::variable(Var::X)}), std::invalid_argument);
}
