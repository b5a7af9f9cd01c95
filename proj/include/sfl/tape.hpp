#ifndef SFL_TAPE_HPP
#define SFL_TAPE_HPP

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "sfl/expr.hpp"
#include "sfl/jet.hpp"

// Static instruction tape. A Program is built once per (model config,
// residual) and then run forward/backward many times; the Tape is the
// reusable per-run workspace. Every value on the tape is a Jet, so the
// reverse pass produces gradients of functionals of (f, f', f'') with
// respect to the parameters.

namespace sfl {

enum class GateMode { Soft, Discrete };

enum class InstKind : uint8_t {
  Const,        // fixed scalar, jet (c, 0, 0)
  InputX,       // sample point as the differentiation variable, (x, 1, 0)
  InputXConst,  // sample point as a plain scalar, (x, 0, 0)
  Param,        // trainable scalar, jet (theta[slot], 0, 0)
  Unary,        // prim applied to insts[a]
  Add,
  Sub,
  Mul,
  GateMix,      // sum_j gate_j * insts[a + j], gates from params[slot..slot+k)
  Component,    // component `comp` of insts[a] as a constant jet
};

struct Inst {
  InstKind kind = InstKind::Const;
  Prim prim = Prim::Identity;  // Unary
  uint8_t comp = 0;            // Component: 0 value, 1 d1, 2 d2
  int32_t a = -1;              // first operand / gate child base
  int32_t b = -1;              // second operand
  int32_t slot = -1;           // Param slot / first gate weight slot
  int32_t k = 0;               // PowInt exponent / gate fan-in
  int32_t scratch = -1;        // GateMix: offset into the tape's gate buffer
  double c = 0.0;              // Const value
};

struct Program {
  std::vector<Inst> insts;
  int n_params = 0;
  int model_output = -1;  // jet of the learned function f(x)
  int output = -1;        // final value (residual when one was compiled in)
  int gate_scratch = 0;   // doubles of gate workspace needed
  double sigma = 0.05;    // discretization width for the gate mix

  int size() const { return static_cast<int>(insts.size()); }
};

struct Tape {
  std::vector<Jet> val;
  std::vector<Jet> adj;
  std::vector<double> gate;  // cached softmax + gate activations per GateMix
};

class ProgramBuilder {
 public:
  explicit ProgramBuilder(int n_params, double sigma = 0.05);

  int constant(double c);
  int input_x();
  int input_x_const();
  int param(int slot);
  int unary(Prim p, int a, int k = 0);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int div(int a, int b);  // emits Recip then Mul
  int component(int a, int comp);  // comp: 0 value, 1 d1, 2 d2
  // children must already sit at consecutive indices [first_child,
  // first_child + k); gate weights are params [slot, slot + k)
  int gate_mix(int first_child, int k, int slot);

  // compile an expression; variable tokens map to existing instructions
  // (D2Y may be -1 when the expression provably never references it, same
  // for Y/DY)
  struct Bindings {
    int x = -1;
    int y = -1;
    int dy = -1;
    int d2y = -1;
  };
  int compile(const Expr& e, const Bindings& bind);

  void set_outputs(int model_output, int output);
  Program take();

 private:
  int push(Inst inst);
  Program prog_;
};

// Runs the program at one sample point. Returns the jet of insts[output].
// The tape keeps all intermediate jets and gate activations for the
// reverse pass.
Jet tape_forward(const Program& prog, GateMode mode,
                 std::span<const double> params, double x, Tape& tape);

// Reverse pass from a seed adjoint placed on `seed_node` (defaults to the
// program output). Adjoints are jets as well: seed = (dL/dv, dL/dd1, dL/dd2)
// of the seeded node. Gradient contributions are accumulated into `grad`.
void tape_backward(const Program& prog, GateMode mode, Tape& tape,
                   const Jet& seed, std::span<double> grad,
                   int seed_node = -1);

// convenience wrapper used by tests: fresh gradient vector per call
Eigen::VectorXd tape_gradient(const Program& prog, GateMode mode,
                              std::span<const double> params, double x,
                              const Jet& seed, int seed_node = -1);

}  // namespace sfl

#endif
