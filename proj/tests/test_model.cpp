#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sfl/model.hpp"

using namespace sfl;

namespace {

SflConfig five_op_config(int delta) {
  SflConfig cfg;
  cfg.depth = 1;
  cfg.unary = {Op::Identity, Op::Sin, Op::SqrtAbs};
  cfg.binary = {Op::Add, Op::Mul};
  cfg.delta = delta;
  return cfg;
}

// params with every gate hard on one operator index and given affine weights
SflParams one_hot_params(const SflConfig& cfg, int op_index, double leaf_w,
                         double leaf_b, double node_w, double node_b,
                         double margin = 50.0) {
  ParamLayout lay(cfg);
  SflParams p;
  p.theta = Eigen::VectorXd::Zero(lay.count());
  for (int i = 0; i < cfg.leaf_count(); ++i) {
    p.theta[lay.leaf_w(i)] = leaf_w;
    p.theta[lay.leaf_b(i)] = leaf_b;
  }
  for (int layer = 1; layer <= cfg.depth; ++layer) {
    int nodes = 1 << (cfg.depth - layer);
    for (int node = 0; node < nodes; ++node) {
      p.theta[lay.omega(layer, node) + op_index] = margin;
      p.theta[lay.node_w(layer, node)] = node_w;
      p.theta[lay.node_b(layer, node)] = node_b;
    }
  }
  return p;
}

}  // namespace

TEST_CASE("operate lists unary results then binary results") {
  SflConfig cfg = five_op_config(0);
  Jet a{0.49, 1.0, 0.0};
  Jet b{2.0, 0.5, 0.0};
  std::vector<Jet> out = operate(a, b, cfg);
  REQUIRE(out.size() == 5);
  CHECK(out[0].v == doctest::Approx(0.49));                  // id(x1)
  CHECK(out[1].v == doctest::Approx(std::sin(0.49)));        // sin(x1)
  CHECK(out[2].v == doctest::Approx(0.7).epsilon(1e-8));     // sqrt(x1)
  CHECK(out[3].v == doctest::Approx(2.49));                  // x1 + x2
  CHECK(out[4].v == doctest::Approx(0.98));                  // x1 * x2
  // delta = 0 ignores x2 in the unary slots entirely
  CHECK(out[0].d1 == doctest::Approx(1.0));

  cfg.delta = 1;
  Jet one{1.0, 0.0, 0.0};
  out = operate(one, one, cfg);
  CHECK(out[0].v == doctest::Approx(2.0));
  CHECK(out[0].d1 == doctest::Approx(0.0));

  SflConfig dflt;
  dflt.delta = 1;
  out = operate(Jet{0.0, 1.0, 0.0}, Jet{0.0, 0.0, 0.0}, dflt);
  REQUIRE(out.size() == 4);
  CHECK(out[1].v == doctest::Approx(0.0));  // sin entry
  CHECK(out[1].d1 == doctest::Approx(1.0));
  CHECK(out[1].d2 == doctest::Approx(0.0));
}

TEST_CASE("softmax") {
  Eigen::VectorXd u(3);
  u << 0.0, 0.0, 0.0;
  Eigen::VectorXd s = softmax(u);
  for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3.0));

  Eigen::VectorXd two(2);
  two << 7.0, 7.0 + std::log(2.0);
  s = softmax(two);
  CHECK(s[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  Eigen::VectorXd spike(3);
  spike << 10.0, 0.0, 0.0;
  s = softmax(spike);
  CHECK(std::abs(s[0] - 0.99990) < 1e-5);
  CHECK(std::abs(s[1] - 0.0000454) < 1e-5);
  CHECK(std::abs(s[2] - 0.0000454) < 1e-5);

  // max subtraction keeps huge logits finite
  Eigen::VectorXd big(2);
  big << 1000.0, 999.0;
  s = softmax(big);
  CHECK(std::isfinite(s[0]));
  CHECK(s.sum() == doctest::Approx(1.0));
}

TEST_CASE("discrete softmax sharpens the winner to exactly one") {
  Eigen::VectorXd w(3);
  w << 5.0, 0.0, 0.0;
  Eigen::VectorXd g = discrete_softmax(w, 0.05);
  CHECK(g[0] == 1.0);
  CHECK(g[1] < 1e-100);
  CHECK(g[2] < 1e-100);

  // exact tie: both entries ride the top of the hump
  Eigen::VectorXd tie(2);
  tie << 3.25, 3.25;
  g = discrete_softmax(tie, 0.05);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 1.0);

  // ratio 1/2 lands exp(-(1-0.5)^2 / 0.05^2) = exp(-100)
  Eigen::VectorXd half(2);
  half << std::log(2.0), 0.0;
  g = discrete_softmax(half, 0.05);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == doctest::Approx(std::exp(-100.0)).epsilon(1e-10));
}

TEST_CASE("gate consistency: all three argmaxes agree") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd w(4);
    for (int i = 0; i < 4; ++i) w[i] = n(rng);
    int wi, si, di;
    w.maxCoeff(&wi);
    softmax(w).maxCoeff(&si);
    discrete_softmax(w, 0.05).maxCoeff(&di);
    CHECK(wi == si);
    CHECK(wi == di);
  }
}

TEST_CASE("forward on hand-built one-hot trees") {
  SflConfig cfg;  // unary [id, sin, sqrt], binary [mul]
  cfg.depth = 1;
  cfg.delta = 0;

  SflParams ident = one_hot_params(cfg, 0, 1.0, 0.0, 1.0, 0.0);
  for (double x : {-1.5, 0.0, 0.7, 2.0}) {
    Jet f = forward(ident, cfg, x, GateMode::Discrete);
    CHECK(f.v == doctest::Approx(x).epsilon(1e-12));
    CHECK(f.d1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.d2 == doctest::Approx(0.0).epsilon(1e-12));
    // a 50-wide margin leaves only ~1e-22 softmax leakage in soft mode
    Jet fs = forward(ident, cfg, x, GateMode::Soft);
    CHECK(fs.v == doctest::Approx(x).epsilon(1e-12));
  }

  SflParams square = one_hot_params(cfg, 3, 1.0, 0.0, 1.0, 0.0);
  Jet f = forward(square, cfg, 1.7, GateMode::Discrete);
  CHECK(f.v == doctest::Approx(1.7 * 1.7));
  CHECK(f.d1 == doctest::Approx(2.0 * 1.7));
  CHECK(f.d2 == doctest::Approx(2.0));

  // sin root with delta=1: right leaf fixed at 0 so sin sees the left leaf
  cfg.delta = 1;
  SflParams sine = one_hot_params(cfg, 1, 1.0, 0.0, 1.0, 0.0);
  ParamLayout lay(cfg);
  sine.theta[lay.leaf_w(1)] = 0.0;
  sine.theta[lay.leaf_b(1)] = 0.0;
  f = forward(sine, cfg, 0.6, GateMode::Discrete);
  CHECK(f.v == doctest::Approx(std::sin(0.6)));
  CHECK(f.d1 == doctest::Approx(std::cos(0.6)));
  CHECK(f.d2 == doctest::Approx(-std::sin(0.6)));
}

TEST_CASE("extract reads off the argmax tree") {
  SflConfig cfg;
  cfg.depth = 1;
  cfg.delta = 0;

  SflParams ident = one_hot_params(cfg, 0, 1.0, 0.0, 1.0, 0.0);
  CHECK(to_string(extract(ident, cfg)) == "x");

  SflParams square = one_hot_params(cfg, 3, 1.0, 0.0, 1.0, 0.0);
  CHECK(to_string(extract(square, cfg)) == "x*x");

  // product leaf pair scaled into the m=0 learned solution: -(x * 0.166x) + 1
  SflParams m0 = one_hot_params(cfg, 3, 1.0, 0.0, -1.0, 1.0);
  ParamLayout lay(cfg);
  m0.theta[lay.leaf_w(1)] = 0.166;
  Expr e = extract(m0, cfg);
  CHECK(to_string(e, 3) == "1 - 0.166*(x*x)");
  CHECK(eval(e, 1.0) == doctest::Approx(0.834));
}

TEST_CASE("init_params is seeded and correctly sized") {
  SflConfig cfg;
  cfg.depth = 2;
  cfg.binary = {Op::Mul};  // k = 4 with the default unary pool
  REQUIRE(cfg.op_count() == 4);

  ParamLayout lay(cfg);
  CHECK(lay.count() == 26);  // 8 leaf scalars + 2*(4+2) + 1*(4+2)

  std::mt19937_64 a(99), b(99), c(100);
  SflParams pa = init_params(cfg, a);
  SflParams pb = init_params(cfg, b);
  SflParams pc = init_params(cfg, c);
  REQUIRE(pa.theta.size() == 26);
  CHECK(pa.theta == pb.theta);
  CHECK(pa.theta != pc.theta);

  // distribution sanity over many draws: omega near 0, w near 1, b near 0
  SflConfig big;
  big.depth = 3;
  big.delta = 0;
  ParamLayout blay(big);
  double wsum = 0.0, bsum = 0.0;
  int tries = 400;
  std::mt19937_64 rng(7);
  for (int t = 0; t < tries; ++t) {
    SflParams p = init_params(big, rng);
    wsum += p.theta[blay.leaf_w(0)];
    bsum += p.theta[blay.leaf_b(0)];
  }
  CHECK(std::abs(wsum / tries - 1.0) < 0.15);
  CHECK(std::abs(bsum / tries) < 0.05);
}

TEST_CASE("config validation") {
  SflConfig cfg;
  cfg.depth = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.depth = 1;
  cfg.delta = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.delta = 0;
  cfg.sigma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.sigma = 0.05;
  cfg.unary = {Op::Sin};  // identity is required for depth padding
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.unary = {Op::Identity, Op::PowInt};  // gate slots carry no exponent
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.unary = {Op::Identity};
  cfg.binary = {Op::Sin};  // not a binary operator
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.binary = {Op::Mul};
  CHECK_NOTHROW(cfg.validate());

  CHECK(SflConfig::for_depth(2).delta == 1);
  CHECK(SflConfig::for_depth(3).delta == 0);
}

TEST_CASE("extraction is faithful to the discrete forward pass") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> xs(-3.0, 3.0);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    SflConfig cfg = trial % 2 == 0 ? SflConfig{} : oracles::random_config(rng);
    cfg.depth = 2;
    // exp towers overflow the losing gate candidates; even at 1e-174 gate
    // weight that swamps the mix, so faithfulness only holds for bounded ops
    std::erase(cfg.unary, Op::Exp);
    SflParams p = init_params(cfg, rng);

    // push every gate to a clear winner: margin >= 10 over the runner-up
    ParamLayout lay(cfg);
    std::uniform_int_distribution<int> op(0, cfg.op_count() - 1);
    for (int layer = 1; layer <= cfg.depth; ++layer) {
      for (int node = 0; node < (1 << (cfg.depth - layer)); ++node) {
        int win = op(rng);
        for (int j = 0; j < cfg.op_count(); ++j)
          p.theta[lay.omega(layer, node) + j] = jitter(rng);
        p.theta[lay.omega(layer, node) + win] = 11.5;
      }
    }

    Expr e = extract(p, cfg, 0.0);
    Expr e1 = differentiate(e);
    Expr e2 = differentiate(e1);
    for (int i = 0; i < 50; ++i) {
      double x = xs(rng);
      if (!oracles::singularity_free(e, x)) continue;
      Jet f = forward(p, cfg, x, GateMode::Discrete);
      double v = eval(e, x), v1 = eval(e1, x), v2 = eval(e2, x);
      if (!std::isfinite(v) || !std::isfinite(v1) || !std::isfinite(v2))
        continue;
      ++checked;
      CHECK(std::abs(f.v - v) <= 1e-6 * (1.0 + std::abs(v)));
      CHECK(std::abs(f.d1 - v1) <= 1e-6 * (1.0 + std::abs(v1)));
      CHECK(std::abs(f.d2 - v2) <= 1e-6 * (1.0 + std::abs(v2)));
    }
  }
  CHECK(checked > 4000);
}

TEST_CASE("an identity layer above the leaves is a no-op") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> xs(-2.5, 2.5);

  for (int trial = 0; trial < 20; ++trial) {
    SflConfig cfg;
    cfg.depth = 2;
    cfg.delta = trial % 2;
    SflParams p = init_params(cfg, rng);

    SflConfig padded = cfg;
    padded.depth = 3;
    ParamLayout lay(cfg), play(padded);
    SflParams q;
    q.theta = Eigen::VectorXd::Zero(play.count());
    for (int i = 0; i < cfg.leaf_count(); ++i) {
      // old leaf i becomes the left child; the right child is held at zero
      q.theta[play.leaf_w(2 * i)] = p.theta[lay.leaf_w(i)];
      q.theta[play.leaf_b(2 * i)] = p.theta[lay.leaf_b(i)];
    }
    for (int node = 0; node < cfg.leaf_count(); ++node) {
      q.theta[play.omega(1, node) + 0] = 50.0;  // identity wins outright
      q.theta[play.node_w(1, node)] = 1.0;
    }
    for (int layer = 1; layer <= cfg.depth; ++layer) {
      for (int node = 0; node < (1 << (cfg.depth - layer)); ++node) {
        for (int j = 0; j < cfg.op_count(); ++j)
          q.theta[play.omega(layer + 1, node) + j] =
              p.theta[lay.omega(layer, node) + j];
        q.theta[play.node_w(layer + 1, node)] = p.theta[lay.node_w(layer, node)];
        q.theta[play.node_b(layer + 1, node)] = p.theta[lay.node_b(layer, node)];
      }
    }

    for (int i = 0; i < 25; ++i) {
      double x = xs(rng);
      for (GateMode mode : {GateMode::Soft, GateMode::Discrete}) {
        Jet a = forward(p, cfg, x, mode);
        Jet b = forward(q, padded, x, mode);
        CHECK(std::abs(a.v - b.v) <= 1e-12 * (1.0 + std::abs(a.v)));
        CHECK(std::abs(a.d1 - b.d1) <= 1e-12 * (1.0 + std::abs(a.d1)));
        CHECK(std::abs(a.d2 - b.d2) <= 1e-12 * (1.0 + std::abs(a.d2)));
      }
    }
  }
}

TEST_CASE("forward gradients match finite differences in both modes") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> xs(-2.0, 2.0);

  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    SflConfig cfg = oracles::random_config(rng);
    Program prog = build_forward_program(cfg);
    SflParams params = init_params(cfg, rng);
    double x = xs(rng);

    for (GateMode mode : {GateMode::Soft, GateMode::Discrete}) {
      Eigen::VectorXd grad =
          tape_gradient(prog, mode,
                        {params.theta.data(), (size_t)params.theta.size()}, x,
                        Jet{1.0, 0.0, 0.0});
      Tape tape;
      std::uniform_int_distribution<int> pick(0, prog.n_params - 1);
      for (int probe = 0; probe < 5; ++probe) {
        int j = pick(rng);
        Eigen::VectorXd theta = params.theta;
        auto f = [&](double tj) {
          theta[j] = tj;
          return tape_forward(prog, mode,
                              {theta.data(), (size_t)theta.size()}, x, tape)
              .v;
        };
        double t0 = params.theta[j];
        if (!oracles::fd_trustworthy(f, t0)) continue;
        double want = oracles::central_diff(f, t0);
        if (std::abs(want) > 1e8) continue;
        ++checked;
        CHECK(std::abs(grad[j] - want) <= 1e-5 * std::abs(want) + 1e-7);
      }
    }
  }
  CHECK(checked > 400);
}
