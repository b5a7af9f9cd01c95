#ifndef SFL_MODEL_HPP
#define SFL_MODEL_HPP

#include <Eigen/Core>
#include <random>
#include <vector>

#include "sfl/expr.hpp"
#include "sfl/tape.hpp"

// The learnable function f(x): a balanced binary parse tree of fixed depth
// whose interior nodes blend a pool of candidate operators through a softmax
// gate. Training runs the gate soft (plain softmax) or discrete (sharply
// peaked at the argmax); extraction reads off the argmax operator per node.

namespace sfl {

struct SflConfig {
  int depth = 2;  // number of gated layers; leaves = 2^depth
  std::vector<Op> unary = {Op::Identity, Op::Sin, Op::SqrtAbs};
  std::vector<Op> binary = {Op::Mul};
  // delta = 1 feeds x1 + x2 to the unary candidates, 0 feeds x1 alone;
  // small trees default to 1, deeper ones to 0
  int delta = 1;
  double sigma = 0.05;  // gate discretization width

  int op_count() const { return static_cast<int>(unary.size() + binary.size()); }
  int leaf_count() const { return 1 << depth; }
  int interior_count() const { return (1 << depth) - 1; }

  // throws std::invalid_argument unless depth >= 1, delta in {0,1},
  // sigma > 0, the unary pool contains Identity and both pools hold only
  // legal gate operators (PowInt is excluded: gate slots carry no exponent)
  void validate() const;

  static SflConfig for_depth(int depth);
};

// flat layout: per-leaf [w, b] pairs, then layer by layer toward the root
// each interior node as [omega(op_count), w, b]
struct ParamLayout {
  explicit ParamLayout(const SflConfig& cfg);
  int leaf_w(int leaf) const;
  int leaf_b(int leaf) const;
  // layer 1 sits just above the leaves, layer == depth is the root;
  // node indexes run 0 .. 2^(depth-layer)-1 left to right
  int omega(int layer, int node) const;
  int node_w(int layer, int node) const;
  int node_b(int layer, int node) const;
  int count() const { return count_; }

 private:
  int depth_;
  int ops_;
  int leaves_;
  int count_;
  std::vector<int> layer_base_;
};

struct SflParams {
  Eigen::VectorXd theta;
};

// omega ~ N(0,1), w ~ N(1, 0.5), b ~ N(0, 0.1), drawn in layout order
SflParams init_params(const SflConfig& cfg, std::mt19937_64& rng);

// numerically stable (max-subtracted) softmax
Eigen::VectorXd softmax(const Eigen::VectorXd& omega);

// s' = H(s / max(s)) with H(t) = exp(-(1-t)^2 / sigma^2); the argmax entry
// is exactly 1. Ties keep every tied entry at 1 (measure-zero case).
Eigen::VectorXd discrete_softmax(const Eigen::VectorXd& omega, double sigma);

// candidate results offered to one gate: unary ops applied to a + delta*b,
// then binary ops applied to (a, b), in pool order
std::vector<Jet> operate(const Jet& a, const Jet& b, const SflConfig& cfg);

// tape for f(x) alone
Program build_forward_program(const SflConfig& cfg);

// tape for residual(x, f, f', f''); Program::model_output is f's node,
// Program::output the residual value
Program build_residual_program(const SflConfig& cfg, const Expr& residual);

// one-off evaluation (builds a throwaway program; training reuses one)
Jet forward(const SflParams& params, const SflConfig& cfg, double x,
            GateMode mode = GateMode::Discrete);

// read off the argmax operator per node (ties -> lowest pool index) and the
// affine weights, then simplify with the given tolerance
Expr extract(const SflParams& params, const SflConfig& cfg, double tol = 1e-6);

}  // namespace sfl

#endif
