#include "sfl/jet.hpp"

#include <stdexcept>

namespace sfl {

PrimDerivs prim_derivs(Prim p, double v, int k) {
  switch (p) {
    case Prim::Identity:
      return {v, 1.0, 0.0, 0.0};
    case Prim::Neg:
      return {-v, -1.0, 0.0, 0.0};
    case Prim::Sin: {
      double s = std::sin(v), c = std::cos(v);
      return {s, c, -s, -c};
    }
    case Prim::Cos: {
      double s = std::sin(v), c = std::cos(v);
      return {c, -s, -c, s};
    }
    case Prim::SqrtAbs: {
      // d/dv sqrt(|v|+eps) = sign(v) / (2 sqrt), and each further derivative
      // picks up another sign(v)/t factor
      double sgn = sign_or_one(v);
      double t = std::abs(v) + kAbsShift;
      double r = std::sqrt(t);
      return {r, sgn / (2.0 * r), -1.0 / (4.0 * t * r),
              sgn * 3.0 / (8.0 * t * t * r)};
    }
    case Prim::Exp: {
      double ex = std::exp(v);
      return {ex, ex, ex, ex};
    }
    case Prim::LogAbs: {
      double sgn = sign_or_one(v);
      double t = std::abs(v) + kAbsShift;
      return {std::log(t), sgn / t, -1.0 / (t * t), sgn * 2.0 / (t * t * t)};
    }
    case Prim::Abs:
      return {std::abs(v), sign_or_one(v), 0.0, 0.0};
    case Prim::Recip: {
      // inside the clamp region the value is pinned, so derivatives vanish
      if (std::abs(v) < kDenFloor) return {guarded_recip(v), 0.0, 0.0, 0.0};
      double r = 1.0 / v;
      double r2 = r * r;
      return {r, -r2, 2.0 * r2 * r, -6.0 * r2 * r2};
    }
    case Prim::PowInt: {
      if (k == 0) return {1.0, 0.0, 0.0, 0.0};
      if (k < 0 && std::abs(v) < kDenFloor)
        return {int_pow(v, k), 0.0, 0.0, 0.0};
      double kk = static_cast<double>(k);
      PrimDerivs d;
      d.f = int_pow(v, k);
      d.d1 = kk * int_pow(v, k - 1);
      d.d2 = (k == 1) ? 0.0 : kk * (kk - 1.0) * int_pow(v, k - 2);
      d.d3 = (k == 1 || k == 2) ? 0.0
                                : kk * (kk - 1.0) * (kk - 2.0) * int_pow(v, k - 3);
      return d;
    }
  }
  return {};
}

double prim_value(Prim p, double v, int k) {
  switch (p) {
    case Prim::Identity: return v;
    case Prim::Neg: return -v;
    case Prim::Sin: return std::sin(v);
    case Prim::Cos: return std::cos(v);
    case Prim::SqrtAbs: return sqrt_abs_value(v);
    case Prim::Exp: return std::exp(v);
    case Prim::LogAbs: return log_abs_value(v);
    case Prim::Abs: return std::abs(v);
    case Prim::Recip: return guarded_recip(v);
    case Prim::PowInt: return int_pow(v, k);
  }
  return 0.0;
}

Jet jet_apply(Op op, const Jet& a, const Jet* b, int k) {
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
      if (b == nullptr)
        throw std::invalid_argument("binary operator needs two jets");
      break;
    default:
      break;
  }
  switch (op) {
    case Op::Add: return jet_add(a, *b);
    case Op::Sub: return jet_sub(a, *b);
    case Op::Mul: return jet_mul(a, *b);
    case Op::Div: return jet_div(a, *b);
    case Op::Neg: return jet_neg(a);
    case Op::PowInt: return jet_unary(Prim::PowInt, a, k);
    case Op::Sin: return jet_unary(Prim::Sin, a);
    case Op::Cos: return jet_unary(Prim::Cos, a);
    case Op::SqrtAbs: return jet_unary(Prim::SqrtAbs, a);
    case Op::Exp: return jet_unary(Prim::Exp, a);
    case Op::LogAbs: return jet_unary(Prim::LogAbs, a);
    case Op::Abs: return jet_unary(Prim::Abs, a);
    case Op::Identity: return a;
  }
  return a;
}

}  // namespace sfl
