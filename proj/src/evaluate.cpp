#include "sfl/evaluate.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "sfl/guards.hpp"

namespace sfl {

double quadrature(const std::function<double(double)>& f, double a, double b,
                  int panels) {
  if (panels < 1) throw std::invalid_argument("need at least one panel");
  if (a == b) return 0.0;
  const double h = (b - a) / panels;
  double sum = 0.0;
  for (int i = 0; i < panels; ++i) {
    double x0 = a + i * h;
    double x1 = (i == panels - 1) ? b : x0 + h;
    double xm = 0.5 * (x0 + x1);
    sum += f(x0) + 4.0 * f(xm) + f(x1);
  }
  return sum * h / 6.0;
}

double residual_error(const Expr& f, const TaskSpec& task, double a, double b,
                      int panels) {
  if (!(a < b)) throw std::invalid_argument("empty evaluation interval");
  Expr f1 = differentiate(f, Var::X);
  Expr f2 = differentiate(f1, Var::X);
  auto at = [&](double x) {
    EvalPoint pt{x, 0, 0, 0};
    pt.y = eval(f, pt);
    pt.y1 = eval(f1, pt);
    pt.y2 = eval(f2, pt);
    return eval(task.residual, pt);
  };
  auto sq = [&](double x) {
    double r = at(x);
    // a grid point can land exactly on a pole; nudge it off rather than
    // letting one sample wipe out the whole integral
    if (!std::isfinite(r)) r = at(x + 1e-9);
    if (!std::isfinite(r)) r = at(x - 1e-9);
    return r * r;
  };
  return quadrature(sq, a, b, panels);
}

std::vector<double> antiderivative_grid(const Expr& integrand,
                                        const std::vector<double>& xs) {
  for (size_t i = 1; i < xs.size(); ++i)
    if (!(xs[i] > xs[i - 1]))
      throw std::invalid_argument("grid must be strictly increasing");
  auto f = [&](double x) { return eval(integrand, x); };

  std::vector<double> out(xs.size());
  if (xs.empty()) return out;
  // anchor at zero, then march panel by panel
  double a0 = 0.0;
  if (xs[0] != 0.0)
    a0 = xs[0] > 0.0 ? quadrature(f, 0.0, xs[0], 1000)
                     : -quadrature(f, xs[0], 0.0, 1000);
  out[0] = a0;
  for (size_t i = 1; i < xs.size(); ++i) {
    double x0 = xs[i - 1], x1 = xs[i];
    double xm = 0.5 * (x0 + x1);
    out[i] = out[i - 1] + (x1 - x0) / 6.0 * (f(x0) + 4.0 * f(xm) + f(x1));
  }
  return out;
}

double antideriv_error(const Expr& fhat, const Expr& integrand, double a,
                       double b, int panels) {
  if (!(a < b)) throw std::invalid_argument("empty evaluation interval");
  if (panels < 1) throw std::invalid_argument("need at least one panel");
  // Simpson over the outer integral needs panel midpoints, so run the inner
  // antiderivative on a half-step grid
  const int fine = 2 * panels;
  std::vector<double> xs(fine + 1);
  for (int i = 0; i <= fine; ++i)
    xs[i] = a + (b - a) * static_cast<double>(i) / fine;
  std::vector<double> A = antiderivative_grid(integrand, xs);

  const double f0 = eval(fhat, 0.0);
  std::vector<double> dev(fine + 1);
  for (int i = 0; i <= fine; ++i) {
    double d = (eval(fhat, xs[i]) - f0) - A[i];
    dev[i] = d * d;
  }
  const double h = (b - a) / panels;
  double sum = 0.0;
  for (int i = 0; i < panels; ++i)
    sum += dev[2 * i] + 4.0 * dev[2 * i + 1] + dev[2 * i + 2];
  return sum * h / 6.0 / (b - a);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double erf_check(const std::function<double(double)>& e, int panels) {
  // plain integral, not a mean: the published comparison does not divide by
  // the interval length
  const double e0 = e(0.0);
  auto sq = [&](double x) {
    double d = (e(x) - e0) - (normal_cdf(x) - 0.5);
    return d * d;
  };
  return quadrature(sq, -1.0, 3.0, panels);
}

double erf_check(const Expr& e, int panels) {
  return erf_check([&](double x) { return eval(e, x); }, panels);
}

namespace {

// solve the residual, affine in its highest derivative, for that derivative
struct OdeRhs {
  const TaskSpec& task;
  Expr d_high;  // d residual / d y^(order)
  int order;

  double highest(double x, double y, double dy) const {
    EvalPoint pt{x, y, order == 2 ? dy : 0.0, 0.0};
    double g0 = eval(task.residual, pt);
    double slope = eval(d_high, pt);
    return -guarded_div(g0, slope);
  }
};

}  // namespace

ReferenceSolution ode_reference(const TaskSpec& task, double x0, double y0,
                                double dy0, double h, double x_end) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
  const bool second = uses_var(task.residual, Var::D2Y);
  if (!second && !uses_var(task.residual, Var::DY))
    throw std::invalid_argument("residual involves no derivative of y");
  OdeRhs rhs{task, differentiate(task.residual, second ? Var::D2Y : Var::DY),
             second ? 2 : 1};

  const double dir = x_end >= x0 ? 1.0 : -1.0;
  ReferenceSolution out;
  out.x.push_back(x0);
  out.y.push_back(y0);
  if (second) out.dy.push_back(dy0);

  double x = x0, y = y0, dy = dy0;
  while (dir * (x_end - x) > 1e-12 * std::max(1.0, std::abs(x_end))) {
    double step = dir * std::min(h, dir * (x_end - x));
    if (second) {
      // state (y, y'), derivatives (y', a(x, y, y'))
      auto f1 = [](double, double, double dd) { return dd; };
      auto f2 = [&](double xx, double yy, double dd) {
        return rhs.highest(xx, yy, dd);
      };
      double k1y = f1(x, y, dy), k1d = f2(x, y, dy);
      double k2y = f1(x + step / 2, y + step / 2 * k1y, dy + step / 2 * k1d);
      double k2d = f2(x + step / 2, y + step / 2 * k1y, dy + step / 2 * k1d);
      double k3y = f1(x + step / 2, y + step / 2 * k2y, dy + step / 2 * k2d);
      double k3d = f2(x + step / 2, y + step / 2 * k2y, dy + step / 2 * k2d);
      double k4y = f1(x + step, y + step * k3y, dy + step * k3d);
      double k4d = f2(x + step, y + step * k3y, dy + step * k3d);
      y += step / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y);
      dy += step / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d);
    } else {
      auto f = [&](double xx, double yy) { return rhs.highest(xx, yy, 0.0); };
      double k1 = f(x, y);
      double k2 = f(x + step / 2, y + step / 2 * k1);
      double k3 = f(x + step / 2, y + step / 2 * k2);
      double k4 = f(x + step, y + step * k3);
      y += step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    x += step;
    out.x.push_back(x);
    out.y.push_back(y);
    if (second) out.dy.push_back(dy);
  }
  return out;
}

SeriesStart singular_series_start(const TaskSpec& task, double x0, double y0,
                                  double dy0, double d) {
  if (d == 0.0) throw std::invalid_argument("series offset must be nonzero");
  auto phi = [&](double c) {
    double x = x0 + d;
    double y = y0 + dy0 * d + 0.5 * c * d * d;
    double dy = dy0 + c * d;
    return eval(task.residual, EvalPoint{x, y, dy, c});
  };
  // secant iteration on the curvature of the local quadratic model
  double c0 = 0.0, c1 = 1.0;
  double p0 = phi(c0), p1 = phi(c1);
  for (int it = 0; it < 100 && std::abs(p1) > 1e-14; ++it) {
    double denom = p1 - p0;
    if (denom == 0.0 || !std::isfinite(denom)) break;
    double c2 = c1 - p1 * (c1 - c0) / denom;
    c0 = c1; p0 = p1;
    c1 = c2; p1 = phi(c1);
    if (!std::isfinite(p1)) break;
  }
  if (!(std::abs(p1) < 1e-8))
    throw std::runtime_error("could not fit a series start for the residual");
  return SeriesStart{x0 + d, y0 + dy0 * d + 0.5 * c1 * d * d, dy0 + c1 * d};
}

void write_curve_csv(std::ostream& out, const std::vector<double>& xs,
                     const std::vector<double>& fhat,
                     const std::optional<std::vector<double>>& reference,
                     const std::vector<double>& residual) {
  if (fhat.size() != xs.size() || residual.size() != xs.size() ||
      (reference && reference->size() != xs.size()))
    throw std::invalid_argument("curve columns must share one length");
  out << "x,f_hat,reference,residual\n";
  char buf[128];
  for (size_t i = 0; i < xs.size(); ++i) {
    if (reference) {
      std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g", xs[i],
                    fhat[i], (*reference)[i], residual[i]);
    } else {
      std::snprintf(buf, sizeof(buf), "%.12g,%.12g,,%.12g", xs[i], fhat[i],
                    residual[i]);
    }
    out << buf << '\n';
  }
}

}  // namespace sfl
