#include "sfl/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace sfl {

namespace {

Prim prim_of(Op op) {
  switch (op) {
    case Op::Neg: return Prim::Neg;
    case Op::PowInt: return Prim::PowInt;
    case Op::Sin: return Prim::Sin;
    case Op::Cos: return Prim::Cos;
    case Op::SqrtAbs: return Prim::SqrtAbs;
    case Op::Exp: return Prim::Exp;
    case Op::LogAbs: return Prim::LogAbs;
    case Op::Abs: return Prim::Abs;
    case Op::Identity: return Prim::Identity;
    default:
      throw std::invalid_argument("not a unary operator");
  }
}

}  // namespace

ProgramBuilder::ProgramBuilder(int n_params, double sigma) {
  if (n_params < 0) throw std::invalid_argument("negative parameter count");
  prog_.n_params = n_params;
  prog_.sigma = sigma;
}

int ProgramBuilder::push(Inst inst) {
  prog_.insts.push_back(inst);
  return prog_.size() - 1;
}

int ProgramBuilder::constant(double c) {
  Inst i;
  i.kind = InstKind::Const;
  i.c = c;
  return push(i);
}

int ProgramBuilder::input_x() {
  Inst i;
  i.kind = InstKind::InputX;
  return push(i);
}

int ProgramBuilder::input_x_const() {
  Inst i;
  i.kind = InstKind::InputXConst;
  return push(i);
}

int ProgramBuilder::param(int slot) {
  if (slot < 0 || slot >= prog_.n_params)
    throw std::invalid_argument("parameter slot out of range");
  Inst i;
  i.kind = InstKind::Param;
  i.slot = slot;
  return push(i);
}

int ProgramBuilder::unary(Prim p, int a, int k) {
  if (a < 0 || a >= prog_.size()) throw std::invalid_argument("bad operand");
  Inst i;
  i.kind = InstKind::Unary;
  i.prim = p;
  i.a = a;
  i.k = k;
  return push(i);
}

int ProgramBuilder::add(int a, int b) {
  if (a < 0 || b < 0 || a >= prog_.size() || b >= prog_.size())
    throw std::invalid_argument("bad operand");
  Inst i;
  i.kind = InstKind::Add;
  i.a = a;
  i.b = b;
  return push(i);
}

int ProgramBuilder::sub(int a, int b) {
  if (a < 0 || b < 0 || a >= prog_.size() || b >= prog_.size())
    throw std::invalid_argument("bad operand");
  Inst i;
  i.kind = InstKind::Sub;
  i.a = a;
  i.b = b;
  return push(i);
}

int ProgramBuilder::mul(int a, int b) {
  if (a < 0 || b < 0 || a >= prog_.size() || b >= prog_.size())
    throw std::invalid_argument("bad operand");
  Inst i;
  i.kind = InstKind::Mul;
  i.a = a;
  i.b = b;
  return push(i);
}

int ProgramBuilder::div(int a, int b) {
  return mul(a, unary(Prim::Recip, b));
}

int ProgramBuilder::component(int a, int comp) {
  if (a < 0 || a >= prog_.size()) throw std::invalid_argument("bad operand");
  if (comp < 0 || comp > 2) throw std::invalid_argument("bad component index");
  Inst i;
  i.kind = InstKind::Component;
  i.a = a;
  i.comp = static_cast<uint8_t>(comp);
  return push(i);
}

int ProgramBuilder::gate_mix(int first_child, int k, int slot) {
  if (k < 1) throw std::invalid_argument("gate needs at least one candidate");
  if (first_child < 0 || first_child + k > prog_.size())
    throw std::invalid_argument("gate children out of range");
  if (slot < 0 || slot + k > prog_.n_params)
    throw std::invalid_argument("gate weight slots out of range");
  Inst i;
  i.kind = InstKind::GateMix;
  i.a = first_child;
  i.k = k;
  i.slot = slot;
  i.scratch = prog_.gate_scratch;
  prog_.gate_scratch += 2 * k;  // cached softmax + gate activations
  return push(i);
}

int ProgramBuilder::compile(const Expr& e, const Bindings& bind) {
  switch (e.kind()) {
    case Expr::Kind::Constant:
      return constant(e.value());
    case Expr::Kind::Variable: {
      int node = -1;
      switch (e.var()) {
        case Var::X: node = bind.x; break;
        case Var::Y: node = bind.y; break;
        case Var::DY: node = bind.dy; break;
        case Var::D2Y: node = bind.d2y; break;
      }
      if (node < 0)
        throw std::invalid_argument("expression uses an unbound variable");
      return node;
    }
    case Expr::Kind::Apply:
      break;
  }
  switch (e.op()) {
    case Op::Add: {
      int a = compile(e.child(0), bind);
      int b = compile(e.child(1), bind);
      return add(a, b);
    }
    case Op::Sub: {
      int a = compile(e.child(0), bind);
      int b = compile(e.child(1), bind);
      return sub(a, b);
    }
    case Op::Mul: {
      int a = compile(e.child(0), bind);
      int b = compile(e.child(1), bind);
      return mul(a, b);
    }
    case Op::Div: {
      int a = compile(e.child(0), bind);
      int b = compile(e.child(1), bind);
      return div(a, b);
    }
    case Op::Identity:
      return compile(e.child(0), bind);
    default:
      return unary(prim_of(e.op()), compile(e.child(0), bind),
                   e.pow_exponent());
  }
}

void ProgramBuilder::set_outputs(int model_output, int output) {
  prog_.model_output = model_output;
  prog_.output = output;
}

Program ProgramBuilder::take() {
  if (prog_.output < 0 || prog_.output >= prog_.size())
    throw std::logic_error("program output not set");
  return std::move(prog_);
}

namespace {

// discretized softmax weight H(t), t = s_j / max(s); the argmax lands on
// t = 1 and gets weight exactly 1
inline double gate_weight(double t, double sigma) {
  double u = (1.0 - t) / sigma;
  return std::exp(-u * u);
}

inline int argmax_first(const double* s, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (s[j] > s[best]) best = j;
  return best;
}

}  // namespace

Jet tape_forward(const Program& prog, GateMode mode,
                 std::span<const double> params, double x, Tape& tape) {
  if (static_cast<int>(params.size()) != prog.n_params)
    throw std::invalid_argument("parameter vector size mismatch");
  const int n = prog.size();
  tape.val.resize(n);
  tape.gate.resize(prog.gate_scratch);

  for (int i = 0; i < n; ++i) {
    const Inst& in = prog.insts[i];
    Jet& out = tape.val[i];
    switch (in.kind) {
      case InstKind::Const:
        out = Jet::constant(in.c);
        break;
      case InstKind::InputX:
        out = Jet::variable(x);
        break;
      case InstKind::InputXConst:
        out = Jet::constant(x);
        break;
      case InstKind::Param:
        out = Jet::constant(params[in.slot]);
        break;
      case InstKind::Unary:
        out = jet_unary(in.prim, tape.val[in.a], in.k);
        break;
      case InstKind::Add:
        out = jet_add(tape.val[in.a], tape.val[in.b]);
        break;
      case InstKind::Sub:
        out = jet_sub(tape.val[in.a], tape.val[in.b]);
        break;
      case InstKind::Mul:
        out = jet_mul(tape.val[in.a], tape.val[in.b]);
        break;
      case InstKind::Component: {
        const Jet& src = tape.val[in.a];
        double c = in.comp == 0 ? src.v : (in.comp == 1 ? src.d1 : src.d2);
        out = Jet::constant(c);
        break;
      }
      case InstKind::GateMix: {
        const int k = in.k;
        double* s = tape.gate.data() + in.scratch;
        double* g = s + k;
        double wmax = params[in.slot];
        for (int j = 1; j < k; ++j) wmax = std::max(wmax, params[in.slot + j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
          s[j] = std::exp(params[in.slot + j] - wmax);
          sum += s[j];
        }
        for (int j = 0; j < k; ++j) s[j] /= sum;
        if (mode == GateMode::Soft) {
          for (int j = 0; j < k; ++j) g[j] = s[j];
        } else {
          double m = s[argmax_first(s, k)];
          for (int j = 0; j < k; ++j) g[j] = gate_weight(s[j] / m, prog.sigma);
        }
        out = Jet{};
        for (int j = 0; j < k; ++j) {
          const Jet& p = tape.val[in.a + j];
          out.v += g[j] * p.v;
          out.d1 += g[j] * p.d1;
          out.d2 += g[j] * p.d2;
        }
        break;
      }
    }
  }
  return tape.val[prog.output];
}

void tape_backward(const Program& prog, GateMode mode, Tape& tape,
                   const Jet& seed, std::span<double> grad, int seed_node) {
  if (seed_node < 0) seed_node = prog.output;
  if (seed_node >= prog.size())
    throw std::invalid_argument("seed node out of range");
  if (static_cast<int>(grad.size()) != prog.n_params)
    throw std::invalid_argument("gradient vector size mismatch");

  tape.adj.assign(prog.size(), Jet{});
  tape.adj[seed_node] = seed;

  for (int i = seed_node; i >= 0; --i) {
    const Jet A = tape.adj[i];
    if (A.v == 0.0 && A.d1 == 0.0 && A.d2 == 0.0) continue;
    const Inst& in = prog.insts[i];
    switch (in.kind) {
      case InstKind::Const:
      case InstKind::InputX:
      case InstKind::InputXConst:
        break;
      case InstKind::Param:
        grad[in.slot] += A.v;
        break;
      case InstKind::Unary: {
        const Jet& a = tape.val[in.a];
        PrimDerivs u = prim_derivs(in.prim, a.v, in.k);
        Jet& ga = tape.adj[in.a];
        ga.v += A.v * u.d1 + A.d1 * u.d2 * a.d1 +
                A.d2 * (u.d3 * a.d1 * a.d1 + u.d2 * a.d2);
        ga.d1 += A.d1 * u.d1 + A.d2 * 2.0 * u.d2 * a.d1;
        ga.d2 += A.d2 * u.d1;
        break;
      }
      case InstKind::Add: {
        Jet& ga = tape.adj[in.a];
        Jet& gb = tape.adj[in.b];
        ga.v += A.v; ga.d1 += A.d1; ga.d2 += A.d2;
        gb.v += A.v; gb.d1 += A.d1; gb.d2 += A.d2;
        break;
      }
      case InstKind::Sub: {
        Jet& ga = tape.adj[in.a];
        Jet& gb = tape.adj[in.b];
        ga.v += A.v; ga.d1 += A.d1; ga.d2 += A.d2;
        gb.v -= A.v; gb.d1 -= A.d1; gb.d2 -= A.d2;
        break;
      }
      case InstKind::Mul: {
        const Jet& a = tape.val[in.a];
        const Jet& b = tape.val[in.b];
        Jet& ga = tape.adj[in.a];
        Jet& gb = tape.adj[in.b];
        ga.v += A.v * b.v + A.d1 * b.d1 + A.d2 * b.d2;
        ga.d1 += A.d1 * b.v + A.d2 * 2.0 * b.d1;
        ga.d2 += A.d2 * b.v;
        gb.v += A.v * a.v + A.d1 * a.d1 + A.d2 * a.d2;
        gb.d1 += A.d1 * a.v + A.d2 * 2.0 * a.d1;
        gb.d2 += A.d2 * a.v;
        break;
      }
      case InstKind::Component: {
        // the extracted component is a plain scalar; only the value slot of
        // the adjoint flows back into that component
        Jet& ga = tape.adj[in.a];
        if (in.comp == 0) ga.v += A.v;
        else if (in.comp == 1) ga.d1 += A.v;
        else ga.d2 += A.v;
        break;
      }
      case InstKind::GateMix: {
        const int k = in.k;
        const double* s = tape.gate.data() + in.scratch;
        const double* g = s + k;
        // dL/dg_j and the child adjoints
        double dldg_sum_s = 0.0;  // soft mode: sum_j dL/dg_j s_j
        double q_dot_t = 0.0;     // discrete mode: sum_j q_j t_j
        int jmax = argmax_first(s, k);
        double m = s[jmax];
        double inv_sigma2 = 1.0 / (prog.sigma * prog.sigma);
        for (int j = 0; j < k; ++j) {
          const Jet& p = tape.val[in.a + j];
          double dldg = A.v * p.v + A.d1 * p.d1 + A.d2 * p.d2;
          Jet& gc = tape.adj[in.a + j];
          gc.v += g[j] * A.v;
          gc.d1 += g[j] * A.d1;
          gc.d2 += g[j] * A.d2;
          if (mode == GateMode::Soft) {
            dldg_sum_s += dldg * s[j];
          } else {
            double t = s[j] / m;
            double q = dldg * g[j] * 2.0 * (1.0 - t) * inv_sigma2;
            q_dot_t += q * t;
          }
        }
        if (mode == GateMode::Soft) {
          for (int j = 0; j < k; ++j) {
            const Jet& p = tape.val[in.a + j];
            double dldg = A.v * p.v + A.d1 * p.d1 + A.d2 * p.d2;
            grad[in.slot + j] += s[j] * (dldg - dldg_sum_s);
          }
        } else {
          // t_j = exp(w_j - w_max) depends on w_j and w_max only, so
          // dL/dw_j = q_j t_j - [j == argmax] sum_i q_i t_i
          for (int j = 0; j < k; ++j) {
            const Jet& p = tape.val[in.a + j];
            double dldg = A.v * p.v + A.d1 * p.d1 + A.d2 * p.d2;
            double t = s[j] / m;
            double q = dldg * g[j] * 2.0 * (1.0 - t) * inv_sigma2;
            grad[in.slot + j] += q * t - (j == jmax ? q_dot_t : 0.0);
          }
        }
        break;
      }
    }
  }
}

Eigen::VectorXd tape_gradient(const Program& prog, GateMode mode,
                              std::span<const double> params, double x,
                              const Jet& seed, int seed_node) {
  Tape tape;
  tape_forward(prog, mode, params, x, tape);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(prog.n_params);
  tape_backward(prog, mode, tape, seed, {grad.data(), (size_t)grad.size()},
                seed_node);
  return grad;
}

}  // namespace sfl
