#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sfl/model.hpp"
#include "sfl/tape.hpp"
#include "sfl/task.hpp"

using namespace sfl;

namespace {

void check_jet(const Jet& got, double v, double d1, double d2,
               double tol = 1e-12) {
  CHECK(got.v == doctest::Approx(v).epsilon(tol));
  CHECK(got.d1 == doctest::Approx(d1).epsilon(tol));
  CHECK(got.d2 == doctest::Approx(d2).epsilon(tol));
}

// w*x as a two-instruction program: params {w}, model output = output
Program wx_program() {
  ProgramBuilder b(1);
  int w = b.param(0);
  int x = b.input_x();
  int m = b.mul(w, x);
  b.set_outputs(m, m);
  return b.take();
}

}  // namespace

TEST_CASE("jet arithmetic on the basic rules") {
  // sin of the seed jet x = 0
  check_jet(jet_apply(Op::Sin, Jet{0.0, 1.0, 0.0}, nullptr, 0), 0.0, 1.0, 0.0);

  // x*x at x = 3: value 9, slope 6, curvature 2
  Jet x{3.0, 1.0, 0.0};
  check_jet(jet_mul(x, x), 9.0, 6.0, 2.0);

  // sqrt(|v|+eps) at 4: the guard shift only moves things at the 1e-9 level
  Jet s = jet_unary(Prim::SqrtAbs, Jet{4.0, 1.0, 0.0});
  check_jet(s, 2.0, 0.25, -0.03125, 1e-9);

  // quotient rule: (x^2) / x == x in value and first two derivatives
  Jet q = jet_div(jet_mul(x, x), x);
  check_jet(q, 3.0, 1.0, 0.0);

  // exp carries its own value through every derivative
  Jet ex = jet_unary(Prim::Exp, Jet{1.0, 2.0, 0.0});
  check_jet(ex, M_E, 2.0 * M_E, 4.0 * M_E);
}

TEST_CASE("tape forward on w*x + b") {
  ProgramBuilder b(2);
  int w = b.param(0);
  int bias = b.param(1);
  int x = b.input_x();
  int out = b.add(b.mul(w, x), bias);
  b.set_outputs(out, out);
  Program prog = b.take();

  Tape tape;
  std::vector<double> theta{1.0, 0.0};
  Jet r = tape_forward(prog, GateMode::Discrete, theta, 2.0, tape);
  check_jet(r, 2.0, 1.0, 0.0);

  theta = {3.0, -1.0};
  r = tape_forward(prog, GateMode::Discrete, theta, 2.0, tape);
  check_jet(r, 5.0, 3.0, 0.0);
}

TEST_CASE("tape backward seeds pick out jet components") {
  Program prog = wx_program();
  std::vector<double> theta{0.7};

  // d out.v / d w = x
  Eigen::VectorXd g = tape_gradient(prog, GateMode::Discrete, theta, 5.0,
                                    Jet{1.0, 0.0, 0.0});
  CHECK(g[0] == doctest::Approx(5.0));

  // out.d1 = w, so its derivative in w is 1 regardless of x
  g = tape_gradient(prog, GateMode::Discrete, theta, 5.0, Jet{0.0, 1.0, 0.0});
  CHECK(g[0] == doctest::Approx(1.0));
}

TEST_CASE("tape backward through sin(w*x)") {
  ProgramBuilder b(1);
  int w = b.param(0);
  int x = b.input_x();
  int out = b.unary(Prim::Sin, b.mul(w, x));
  b.set_outputs(out, out);
  Program prog = b.take();

  std::vector<double> theta{0.5};
  Eigen::VectorXd g = tape_gradient(prog, GateMode::Discrete, theta, 2.0,
                                    Jet{1.0, 0.0, 0.0});
  CHECK(g[0] == doctest::Approx(2.0 * std::cos(1.0)).epsilon(1e-12));
  CHECK(g[0] == doctest::Approx(1.0806).epsilon(1e-4));
}

TEST_CASE("jets match eval plus symbolic derivatives on random expressions") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> xs(-3.0, 3.0);
  for (int trial = 0; trial < 250; ++trial) {
    Expr e = oracles::random_expr(rng, 4);
    Expr d1 = differentiate(e);
    Expr d2 = differentiate(d1);

    ProgramBuilder b(0);
    ProgramBuilder::Bindings bind;
    bind.x = b.input_x();
    int out = b.compile(e, bind);
    b.set_outputs(out, out);
    Program prog = b.take();
    Tape tape;

    for (int i = 0; i < 20; ++i) {
      double x = xs(rng);
      // inside a guard band the dual numbers freeze the clamped value while
      // the symbolic derivative keeps its algebraic form; both only promise
      // agreement away from the unguarded expression's singularities
      if (!oracles::singularity_free(e, x)) continue;
      Jet got = tape_forward(prog, GateMode::Discrete, {}, x, tape);
      double w0 = eval(e, x), w1 = eval(d1, x), w2 = eval(d2, x);
      if (!std::isfinite(w0) || !std::isfinite(w1) || !std::isfinite(w2))
        continue;
      if (std::abs(w0) > 1e12 || std::abs(w1) > 1e12 || std::abs(w2) > 1e12)
        continue;
      CHECK(std::abs(got.v - w0) <= 1e-8 * (1.0 + std::abs(w0)));
      CHECK(std::abs(got.d1 - w1) <= 1e-8 * (1.0 + std::abs(w1)));
      CHECK(std::abs(got.d2 - w2) <= 1e-8 * (1.0 + std::abs(w2)));
    }
  }
}

TEST_CASE("tape gradients match finite differences on random models") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> xs(-2.0, 2.0);
  std::uniform_int_distribution<int> comp(0, 2);
  std::uniform_int_distribution<int> mode_pick(0, 1);

  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    SflConfig cfg = oracles::random_config(rng);
    Expr residual = oracles::random_residual(rng);
    Program prog = build_residual_program(cfg, residual);
    SflParams params = init_params(cfg, rng);
    REQUIRE(params.theta.size() == prog.n_params);

    GateMode mode = mode_pick(rng) ? GateMode::Soft : GateMode::Discrete;
    double x = xs(rng);
    Jet seed{};
    int c = comp(rng);
    (c == 0 ? seed.v : c == 1 ? seed.d1 : seed.d2) = 1.0;

    Eigen::VectorXd grad =
        tape_gradient(prog, mode, {params.theta.data(),
                                   (size_t)params.theta.size()},
                      x, seed);

    Tape tape;
    std::uniform_int_distribution<int> pick(0, prog.n_params - 1);
    for (int probe = 0; probe < 4; ++probe) {
      int j = pick(rng);
      Eigen::VectorXd theta = params.theta;
      auto f = [&](double tj) {
        theta[j] = tj;
        Jet out = tape_forward(prog, mode,
                               {theta.data(), (size_t)theta.size()}, x, tape);
        return c == 0 ? out.v : c == 1 ? out.d1 : out.d2;
      };
      double t0 = params.theta[j];
      if (!oracles::fd_trustworthy(f, t0)) continue;
      double want = oracles::central_diff(f, t0);
      if (std::abs(want) > 1e8) continue;
      ++checked;
      CHECK(std::abs(grad[j] - want) <= 1e-5 * std::abs(want) + 1e-7);
    }
  }
  CHECK(checked > 500);
}

TEST_CASE("backward is linear in the seed") {
  std::mt19937_64 rng(47);
  SflConfig cfg;
  cfg.unary = {Op::Identity, Op::Sin, Op::SqrtAbs};
  cfg.binary = {Op::Mul};
  Expr y = Expr::variable(Var::Y);
  Program prog = build_residual_program(cfg, y - sin(Expr::variable(Var::X)));
  SflParams params = init_params(cfg, rng);
  std::span<const double> theta{params.theta.data(),
                                (size_t)params.theta.size()};

  Jet s1{0.3, -1.2, 0.8}, s2{-0.4, 0.9, 2.0};
  double al = 1.7, be = -0.6;
  Jet mix{al * s1.v + be * s2.v, al * s1.d1 + be * s2.d1,
          al * s1.d2 + be * s2.d2};

  double x = 0.73;
  Eigen::VectorXd g1 = tape_gradient(prog, GateMode::Soft, theta, x, s1);
  Eigen::VectorXd g2 = tape_gradient(prog, GateMode::Soft, theta, x, s2);
  Eigen::VectorXd gm = tape_gradient(prog, GateMode::Soft, theta, x, mix);

  for (int j = 0; j < gm.size(); ++j) {
    double want = al * g1[j] + be * g2[j];
    CHECK(std::abs(gm[j] - want) <= 1e-12 * (1.0 + std::abs(want)));
  }
}

TEST_CASE("builder rejects malformed programs") {
  ProgramBuilder b(1);
  int w = b.param(0);
  CHECK_THROWS_AS(b.param(1), std::invalid_argument);   // slot out of range
  CHECK_THROWS_AS(b.mul(w, 99), std::invalid_argument); // dangling operand
  CHECK_THROWS_AS(b.unary(Prim::Sin, -1), std::invalid_argument);
  CHECK_THROWS_AS(b.component(w, 3), std::invalid_argument);

  // compiling an expression that uses y without a binding
  ProgramBuilder c(0);
  ProgramBuilder::Bindings bind;
  bind.x = c.input_x();
  CHECK_THROWS_AS(c.compile(Expr::variable(Var::Y), bind),
                  std::invalid_argument);

  // a program with no declared output cannot be finalized
  ProgramBuilder d(0);
  d.input_x();
  CHECK_THROWS_AS(d.take(), std::logic_error);
}

TEST_CASE("non-finite batch samples are dropped from the gradient") {
  // exp(exp(exp(x))) overflows for modest x, which the loss must survive
  SflConfig cfg;
  cfg.depth = 1;
  cfg.unary = {Op::Identity, Op::Exp};
  cfg.binary = {Op::Mul};
  TaskSpec task = make_task(TaskKind::Ode, "y - exp(exp(exp(10*x)))",
                            {-100.0, 100.0});
  std::mt19937_64 rng(5);
  SflParams params = init_params(cfg, rng);

  LossResult r = loss(task, params, cfg, GateMode::Soft,
                      std::vector<double>{50.0, 90.0}, false);
  CHECK(r.bad_samples == 2);
  CHECK(r.all_bad);
  CHECK(std::isnan(r.err));
  CHECK(r.grad.allFinite());
  CHECK(r.grad.norm() == 0.0);

  // one good sample keeps the loss finite and the gradient usable
  r = loss(task, params, cfg, GateMode::Soft,
           std::vector<double>{0.0, 90.0}, false);
  CHECK(r.bad_samples == 1);
  CHECK(!r.all_bad);
  CHECK(std::isfinite(r.err));
  CHECK(r.err >= 1e12 / 2);
  CHECK(r.grad.allFinite());
}
