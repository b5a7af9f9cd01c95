#ifndef SFL_EVALUATE_HPP
#define SFL_EVALUATE_HPP

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sfl/task.hpp"

// Quadrature-based quality metrics for candidate solutions, plus numeric
// reference solutions (Runge-Kutta) and CSV export for plotting.

namespace sfl {

// composite Simpson on [a, b] with `panels` equal panels (panels >= 1)
double quadrature(const std::function<double(double)>& f, double a, double b,
                  int panels = 2000);

// integrated squared task residual of f over [a, b]: int g(x, f, f', f'')^2
// dx with exact symbolic derivatives of f (a plain integral, so the value
// scales with the interval length). Integrand evaluation uses the guarded
// rules, so singular task points (e.g. a 1/x term at 0) stay finite;
// exclusion intervals of the task are NOT skipped.
double residual_error(const Expr& f, const TaskSpec& task, double a, double b,
                      int panels = 2000);

// How well fhat matches an antiderivative of `integrand` on [a, b], with the
// free integration constant fixed by anchoring both curves at x = 0:
//   (1/(b-a)) * int ( (fhat(x) - fhat(0)) - int_0^x integrand )^2 dx
// The inner running integral is Simpson per panel on the same grid.
double antideriv_error(const Expr& fhat, const Expr& integrand, double a,
                       double b, int panels = 2000);

// standard normal CDF
double normal_cdf(double x);

// anchored squared deviation from the standard normal CDF over [-1, 3]:
// int ((e(x) - e(0)) - (Phi(x) - Phi(0)))^2 dx, the check for a candidate
// error-function-style antiderivative of the normal density. Unlike the
// other metrics this is a plain integral, not a mean over the interval.
double erf_check(const Expr& e, int panels = 2000);
double erf_check(const std::function<double(double)>& e, int panels = 2000);

struct ReferenceSolution {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> dy;  // empty for first-order problems
};

// classic RK4 on the task residual solved for the highest derivative
// (the residual must be affine in it, true for every built-in task form).
// Steps from x0 to x_end in steps of h (sign chosen from the direction);
// grid includes both ends.
ReferenceSolution ode_reference(const TaskSpec& task, double x0, double y0,
                                double dy0, double h, double x_end);

// Series start for ODEs whose residual is singular at the initial point
// (e.g. a 2/x term at x = 0): fits the curvature c of the local model
// y(x0+d) = y0 + dy0*d + c*d^2/2 by solving the residual at x0 + d, then
// returns the shifted initial data at x0 + d.
struct SeriesStart {
  double x = 0.0;
  double y = 0.0;
  double dy = 0.0;
};
SeriesStart singular_series_start(const TaskSpec& task, double x0, double y0,
                                  double dy0, double d = 1e-4);

// running antiderivative of `integrand` anchored at 0, evaluated on xs
std::vector<double> antiderivative_grid(const Expr& integrand,
                                        const std::vector<double>& xs);

// "x,f_hat,reference,residual" with 12 significant digits; reference column
// left empty when absent
void write_curve_csv(std::ostream& out, const std::vector<double>& xs,
                     const std::vector<double>& fhat,
                     const std::optional<std::vector<double>>& reference,
                     const std::vector<double>& residual);

}  // namespace sfl

#endif
