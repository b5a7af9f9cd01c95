#ifndef SFL_JET_HPP
#define SFL_JET_HPP

#include <cmath>

#include "sfl/expr.hpp"
#include "sfl/guards.hpp"

// Second-order forward-mode dual numbers ("jets"): value plus first and
// second derivative with respect to one scalar input. d2 is the plain second
// derivative, so the product rule carries the 2*a1*b1 cross term.

namespace sfl {

struct Jet {
  double v = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;

  static Jet constant(double c) { return {c, 0.0, 0.0}; }
  static Jet variable(double x) { return {x, 1.0, 0.0}; }
};

inline Jet jet_add(const Jet& a, const Jet& b) {
  return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2};
}

inline Jet jet_sub(const Jet& a, const Jet& b) {
  return {a.v - b.v, a.d1 - b.d1, a.d2 - b.d2};
}

inline Jet jet_mul(const Jet& a, const Jet& b) {
  return {a.v * b.v,
          a.v * b.d1 + a.d1 * b.v,
          a.v * b.d2 + 2.0 * a.d1 * b.d1 + a.d2 * b.v};
}

inline Jet jet_neg(const Jet& a) { return {-a.v, -a.d1, -a.d2}; }

// scalar primitives the tape runs on. Every unary Op lowers to one of these;
// Div lowers to Recip followed by Mul.
enum class Prim : uint8_t {
  Identity,
  Neg,
  Sin,
  Cos,
  SqrtAbs,
  Exp,
  LogAbs,
  Abs,
  Recip,
  PowInt,
};

// u(v) together with u', u'', u''' at v; the third derivative feeds the
// reverse pass over jets
struct PrimDerivs {
  double f = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
};

PrimDerivs prim_derivs(Prim p, double v, int k = 0);
double prim_value(Prim p, double v, int k = 0);

// chain rule through a unary primitive
inline Jet jet_lift(const PrimDerivs& u, const Jet& a) {
  return {u.f, u.d1 * a.d1, u.d2 * a.d1 * a.d1 + u.d1 * a.d2};
}

inline Jet jet_unary(Prim p, const Jet& a, int k = 0) {
  return jet_lift(prim_derivs(p, a.v, k), a);
}

inline Jet jet_div(const Jet& a, const Jet& b) {
  return jet_mul(a, jet_unary(Prim::Recip, b));
}

// generic entry point keyed on the expression operator set; b is required
// exactly for the binary ops, k only for PowInt
Jet jet_apply(Op op, const Jet& a, const Jet* b = nullptr, int k = 0);

}  // namespace sfl

#endif
