#include "sfl/model.hpp"

#include <cmath>
#include <stdexcept>

namespace sfl {

namespace {

Prim unary_prim(Op op) {
  switch (op) {
    case Op::Identity: return Prim::Identity;
    case Op::Neg: return Prim::Neg;
    case Op::Sin: return Prim::Sin;
    case Op::Cos: return Prim::Cos;
    case Op::SqrtAbs: return Prim::SqrtAbs;
    case Op::Exp: return Prim::Exp;
    case Op::LogAbs: return Prim::LogAbs;
    case Op::Abs: return Prim::Abs;
    default:
      throw std::invalid_argument("operator not usable as a unary gate candidate");
  }
}

bool is_binary_candidate(Op op) {
  return op == Op::Add || op == Op::Sub || op == Op::Mul || op == Op::Div;
}

}  // namespace

void SflConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("tree depth must be >= 1");
  if (delta != 0 && delta != 1) throw std::invalid_argument("delta must be 0 or 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (op_count() < 1) throw std::invalid_argument("operator pool is empty");
  bool has_identity = false;
  for (Op op : unary) {
    unary_prim(op);  // throws on binary/pow entries
    has_identity = has_identity || op == Op::Identity;
  }
  if (!has_identity)
    throw std::invalid_argument("unary pool must contain the identity operator");
  for (Op op : binary)
    if (!is_binary_candidate(op))
      throw std::invalid_argument("operator not usable as a binary gate candidate");
}

SflConfig SflConfig::for_depth(int depth) {
  SflConfig cfg;
  cfg.depth = depth;
  cfg.delta = depth <= 2 ? 1 : 0;
  return cfg;
}

ParamLayout::ParamLayout(const SflConfig& cfg)
    : depth_(cfg.depth), ops_(cfg.op_count()), leaves_(cfg.leaf_count()) {
  layer_base_.assign(depth_ + 1, 0);
  int base = 2 * leaves_;
  for (int n = 1; n <= depth_; ++n) {
    layer_base_[n] = base;
    base += (leaves_ >> n) * (ops_ + 2);
  }
  count_ = base;
}

int ParamLayout::leaf_w(int leaf) const { return 2 * leaf; }
int ParamLayout::leaf_b(int leaf) const { return 2 * leaf + 1; }
int ParamLayout::omega(int layer, int node) const {
  return layer_base_[layer] + node * (ops_ + 2);
}
int ParamLayout::node_w(int layer, int node) const {
  return omega(layer, node) + ops_;
}
int ParamLayout::node_b(int layer, int node) const {
  return omega(layer, node) + ops_ + 1;
}

SflParams init_params(const SflConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ParamLayout layout(cfg);
  std::normal_distribution<double> omega_dist(0.0, 1.0);
  std::normal_distribution<double> w_dist(1.0, 0.5);
  std::normal_distribution<double> b_dist(0.0, 0.1);

  SflParams p;
  p.theta = Eigen::VectorXd::Zero(layout.count());
  for (int i = 0; i < cfg.leaf_count(); ++i) {
    p.theta[layout.leaf_w(i)] = w_dist(rng);
    p.theta[layout.leaf_b(i)] = b_dist(rng);
  }
  for (int n = 1; n <= cfg.depth; ++n) {
    int nodes = cfg.leaf_count() >> n;
    for (int i = 0; i < nodes; ++i) {
      for (int j = 0; j < cfg.op_count(); ++j)
        p.theta[layout.omega(n, i) + j] = omega_dist(rng);
      p.theta[layout.node_w(n, i)] = w_dist(rng);
      p.theta[layout.node_b(n, i)] = b_dist(rng);
    }
  }
  return p;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& omega) {
  Eigen::VectorXd s = (omega.array() - omega.maxCoeff()).exp();
  return s / s.sum();
}

Eigen::VectorXd discrete_softmax(const Eigen::VectorXd& omega, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  Eigen::VectorXd s = softmax(omega);
  double m = s.maxCoeff();
  return ((1.0 - (s.array() / m)).square() / (-sigma * sigma)).exp();
}

std::vector<Jet> operate(const Jet& a, const Jet& b, const SflConfig& cfg) {
  std::vector<Jet> out;
  out.reserve(cfg.op_count());
  Jet arg = cfg.delta == 1 ? jet_add(a, b) : a;
  for (Op op : cfg.unary) out.push_back(jet_unary(unary_prim(op), arg));
  for (Op op : cfg.binary) out.push_back(jet_apply(op, a, &b));
  return out;
}

namespace {

// shared tree emitter: returns the root instruction index
int emit_tree(ProgramBuilder& b, const SflConfig& cfg, const ParamLayout& layout) {
  int x = b.input_x();
  std::vector<int> level;
  level.reserve(cfg.leaf_count());
  for (int i = 0; i < cfg.leaf_count(); ++i) {
    int wx = b.mul(b.param(layout.leaf_w(i)), x);
    level.push_back(b.add(wx, b.param(layout.leaf_b(i))));
  }
  for (int n = 1; n <= cfg.depth; ++n) {
    std::vector<int> next;
    int nodes = cfg.leaf_count() >> n;
    next.reserve(nodes);
    for (int i = 0; i < nodes; ++i) {
      int l = level[2 * i];
      int r = level[2 * i + 1];
      // helper values first so the gate candidates stay contiguous
      int arg = cfg.delta == 1 ? b.add(l, r) : l;
      int recip = -1;
      for (Op op : cfg.binary)
        if (op == Op::Div && recip < 0) recip = b.unary(Prim::Recip, r);

      int first = -1;
      for (Op op : cfg.unary) {
        int c = b.unary(unary_prim(op), arg);
        if (first < 0) first = c;
      }
      for (Op op : cfg.binary) {
        int c = -1;
        switch (op) {
          case Op::Add: c = b.add(l, r); break;
          case Op::Sub: c = b.sub(l, r); break;
          case Op::Mul: c = b.mul(l, r); break;
          case Op::Div: c = b.mul(l, recip); break;
          default: break;
        }
        if (first < 0) first = c;
      }
      int gate = b.gate_mix(first, cfg.op_count(), layout.omega(n, i));
      int scaled = b.mul(b.param(layout.node_w(n, i)), gate);
      next.push_back(b.add(scaled, b.param(layout.node_b(n, i))));
    }
    level = std::move(next);
  }
  return level[0];
}

}  // namespace

Program build_forward_program(const SflConfig& cfg) {
  cfg.validate();
  ParamLayout layout(cfg);
  ProgramBuilder b(layout.count(), cfg.sigma);
  int root = emit_tree(b, cfg, layout);
  b.set_outputs(root, root);
  return b.take();
}

Program build_residual_program(const SflConfig& cfg, const Expr& residual) {
  cfg.validate();
  ParamLayout layout(cfg);
  ProgramBuilder b(layout.count(), cfg.sigma);
  int root = emit_tree(b, cfg, layout);
  // residual sees the sample point as a plain scalar; the function and its
  // derivatives enter through the root jet's components
  ProgramBuilder::Bindings bind;
  bind.x = b.input_x_const();
  bind.y = b.component(root, 0);
  bind.dy = b.component(root, 1);
  bind.d2y = b.component(root, 2);
  int out = b.compile(residual, bind);
  b.set_outputs(root, out);
  return b.take();
}

Jet forward(const SflParams& params, const SflConfig& cfg, double x,
            GateMode mode) {
  Program prog = build_forward_program(cfg);
  Tape tape;
  return tape_forward(prog, mode,
                      {params.theta.data(), (size_t)params.theta.size()}, x,
                      tape);
}

Expr extract(const SflParams& params, const SflConfig& cfg, double tol) {
  cfg.validate();
  ParamLayout layout(cfg);
  if (params.theta.size() != layout.count())
    throw std::invalid_argument("parameter vector does not match config");

  const Eigen::VectorXd& t = params.theta;
  Expr x = Expr::variable(Var::X);
  std::vector<Expr> level;
  level.reserve(cfg.leaf_count());
  for (int i = 0; i < cfg.leaf_count(); ++i)
    level.push_back(Expr::constant(t[layout.leaf_w(i)]) * x +
                    Expr::constant(t[layout.leaf_b(i)]));

  for (int n = 1; n <= cfg.depth; ++n) {
    std::vector<Expr> next;
    int nodes = cfg.leaf_count() >> n;
    next.reserve(nodes);
    for (int i = 0; i < nodes; ++i) {
      const Expr& l = level[2 * i];
      const Expr& r = level[2 * i + 1];
      // argmax with ties toward the lowest pool index
      int base = layout.omega(n, i);
      int best = 0;
      for (int j = 1; j < cfg.op_count(); ++j)
        if (t[base + j] > t[base + best]) best = j;

      Expr op_expr;
      if (best < static_cast<int>(cfg.unary.size())) {
        Expr arg = cfg.delta == 1 ? l + r : l;
        op_expr = Expr::apply(cfg.unary[best], {arg});
      } else {
        op_expr = Expr::apply(cfg.binary[best - cfg.unary.size()], {l, r});
      }
      next.push_back(Expr::constant(t[layout.node_w(n, i)]) * op_expr +
                     Expr::constant(t[layout.node_b(n, i)]));
    }
    level = std::move(next);
  }
  return simplify(level[0], tol);
}

}  // namespace sfl
