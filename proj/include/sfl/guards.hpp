#ifndef SFL_GUARDS_HPP
#define SFL_GUARDS_HPP

#include <cmath>

// Numeric guards shared by expression evaluation, the dual-number kernels and
// the model's operator pool. Evaluation is total: division clamps the
// denominator magnitude, sqrt/log act on |v| shifted away from zero.

namespace sfl {

inline constexpr double kDenFloor = 1e-6;   // minimum |denominator|
inline constexpr double kAbsShift = 1e-9;   // shift inside sqrt/log
inline constexpr double kResidualClip = 1e6;

inline double sign_or_one(double v) { return v < 0.0 ? -1.0 : 1.0; }

// sign(d) * max(|d|, kDenFloor); sign(0) counts as +1
inline double guard_den(double d) {
  return std::abs(d) >= kDenFloor ? d : sign_or_one(d) * kDenFloor;
}

inline double guarded_div(double a, double b) { return a / guard_den(b); }
inline double guarded_recip(double b) { return 1.0 / guard_den(b); }

inline double sqrt_abs_value(double v) { return std::sqrt(std::abs(v) + kAbsShift); }
inline double log_abs_value(double v) { return std::log(std::abs(v) + kAbsShift); }

// integer power by squaring; negative exponents go through the guarded
// reciprocal so 0^-k stays finite
inline double int_pow(double base, int k) {
  if (k < 0) {
    base = guarded_recip(base);
    k = -k;
  }
  double r = 1.0;
  double p = base;
  while (k > 0) {
    if (k & 1) r *= p;
    p *= p;
    k >>= 1;
  }
  return r;
}

}  // namespace sfl

#endif
