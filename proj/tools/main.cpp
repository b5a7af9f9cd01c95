#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sfl/runspec.hpp"

namespace {

using sfl::ordered_json;

void write_file_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush())
      throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, target);
}

int default_threads() {
  if (const char* env = std::getenv("SFL_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

// monotone bracket expansion + bisection, used to invert p numerically
std::optional<double> solve_scalar(const sfl::Expr& p, double target) {
  auto g = [&](double t) { return sfl::eval(p, t) - target; };
  double lo = -1.0, hi = 1.0;
  for (int i = 0; i < 60 && g(lo) * g(hi) > 0.0; ++i) {
    lo *= 2.0;
    hi *= 2.0;
    if (!std::isfinite(g(lo)) || !std::isfinite(g(hi))) return std::nullopt;
  }
  double glo = g(lo), ghi = g(hi);
  if (glo * ghi > 0.0) return std::nullopt;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    double gm = g(mid);
    if (gm == 0.0) return mid;
    if (glo * gm < 0.0) {
      hi = mid;
      ghi = gm;
    } else {
      lo = mid;
      glo = gm;
    }
  }
  return 0.5 * (lo + hi);
}

// true-solution column for the task kinds that have a numeric oracle:
// integrate -> running antiderivative (shifted to meet the candidate at 0),
// ode       -> Runge-Kutta from the stated initial conditions,
// inverse   -> numeric inverse of p, root -> the root of p (constant)
std::optional<std::vector<double>> reference_column(const sfl::TaskSpec& task,
                                                    const std::vector<double>& xs,
                                                    const sfl::Expr& best) {
  switch (task.kind) {
    case sfl::TaskKind::Integrate: {
      if (!task.source) return std::nullopt;
      std::vector<double> ref = sfl::antiderivative_grid(*task.source, xs);
      double shift = sfl::eval(best, 0.0);
      for (double& v : ref) v += shift;
      return ref;
    }
    case sfl::TaskKind::Ode: {
      std::optional<double> x0, y0, dy0;
      for (const sfl::Constraint& c : task.constraints) {
        if (c.order == 0 && !y0) {
          x0 = c.x;
          y0 = c.y;
        } else if (c.order == 1 && !dy0) {
          dy0 = c.y;
        }
      }
      if (!y0) return std::nullopt;
      double xs0 = *x0, ys0 = *y0, ds0 = dy0.value_or(0.0);
      // step off the initial point with a local series fit; this also clears
      // singular origins like the 2/x term in Lane-Emden equations
      try {
        sfl::SeriesStart s = sfl::singular_series_start(task, xs0, ys0, ds0);
        xs0 = s.x;
        ys0 = s.y;
        ds0 = s.dy;
      } catch (const std::exception&) {
        return std::nullopt;
      }
      if (xs.front() < xs0 - 1e-6) return std::nullopt;
      sfl::ReferenceSolution sol =
          sfl::ode_reference(task, xs0, ys0, ds0, 1e-3, xs.back());
      std::vector<double> ref(xs.size());
      size_t j = 0;
      for (size_t i = 0; i < xs.size(); ++i) {
        double x = std::max(xs[i], sol.x.front());
        while (j + 2 < sol.x.size() && sol.x[j + 1] < x) ++j;
        double t = (x - sol.x[j]) / (sol.x[j + 1] - sol.x[j]);
        ref[i] = sol.y[j] + t * (sol.y[j + 1] - sol.y[j]);
      }
      return ref;
    }
    case sfl::TaskKind::Inverse: {
      if (!task.source) return std::nullopt;
      std::vector<double> ref(xs.size());
      for (size_t i = 0; i < xs.size(); ++i) {
        std::optional<double> t = solve_scalar(*task.source, xs[i]);
        if (!t) return std::nullopt;
        ref[i] = *t;
      }
      return ref;
    }
    case sfl::TaskKind::Root: {
      if (!task.source) return std::nullopt;
      std::optional<double> r = solve_scalar(*task.source, 0.0);
      if (!r) return std::nullopt;
      return std::vector<double>(xs.size(), *r);
    }
    default:
      return std::nullopt;
  }
}

std::string curve_csv(const sfl::TaskSpec& task, const sfl::Expr& best,
                      const std::vector<double>& xs,
                      const std::optional<std::vector<double>>& reference) {
  std::vector<double> fh(xs.size()), resid(xs.size());
  sfl::Expr f1 = sfl::differentiate(best, sfl::Var::X);
  sfl::Expr f2 = sfl::differentiate(f1, sfl::Var::X);
  for (size_t i = 0; i < xs.size(); ++i) {
    sfl::EvalPoint pt{xs[i], 0, 0, 0};
    pt.y = sfl::eval(best, pt);
    pt.y1 = sfl::eval(f1, pt);
    pt.y2 = sfl::eval(f2, pt);
    fh[i] = pt.y;
    resid[i] = sfl::eval(task.residual, pt);
  }
  std::ostringstream out;
  sfl::write_curve_csv(out, xs, fh, reference, resid);
  return out.str();
}

std::vector<double> linspace(double lo, double hi, int points) {
  if (points < 2) throw std::invalid_argument("need at least two grid points");
  std::vector<double> xs(points);
  for (int i = 0; i < points; ++i)
    xs[i] = lo + (hi - lo) * static_cast<double>(i) / (points - 1);
  return xs;
}

std::string solve_csv(const sfl::RunSpec& spec, const sfl::Expr& best) {
  std::vector<double> xs =
      linspace(spec.task.domain.lo, spec.task.domain.hi, 1000);
  return curve_csv(spec.task, best, xs, reference_column(spec.task, xs, best));
}

int run_solve(const std::string& spec_path, const std::string& out_path,
              const std::string& csv_path, int threads, bool progress,
              bool timing) {
  sfl::RunSpec spec = sfl::load_runspec_file(spec_path);
  spec.train.threads = threads;
  spec.train.progress = progress;

  auto t0 = std::chrono::steady_clock::now();
  sfl::RunResult result = sfl::solve(spec.task, spec.model, spec.train);
  std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;

  std::optional<double> wall;
  if (timing) wall = elapsed.count();
  ordered_json doc = sfl::result_to_json(spec, result, wall);
  write_file_atomic(out_path, doc.dump(2) + "\n");

  if (!csv_path.empty() && !result.all_diverged())
    write_file_atomic(csv_path, solve_csv(spec, result.best().expression));

  if (result.all_diverged()) {
    std::fprintf(stderr, "all restarts diverged\n");
    return 2;
  }
  std::printf("%s\n", sfl::to_string(result.best().expression, 6).c_str());
  return 0;
}

int run_eval(const std::string& expr_text, const std::string& task_path,
             const std::string& metric, const std::string& g_text,
             const std::string& integrand_text, std::vector<double> interval,
             int panels) {
  sfl::Expr f = sfl::parse(expr_text);

  double value = 0.0;
  if (!task_path.empty()) {
    sfl::RunSpec spec = sfl::load_runspec_file(task_path);
    double lo = interval.size() == 2 ? interval[0] : spec.task.domain.lo;
    double hi = interval.size() == 2 ? interval[1] : spec.task.domain.hi;
    switch (spec.task.kind) {
      case sfl::TaskKind::Integrate:
        value = sfl::antideriv_error(f, *spec.task.source, lo, hi, panels);
        break;
      case sfl::TaskKind::Regression:
        value = sfl::expression_err(spec.task, f, {}, true);
        break;
      default:
        value = sfl::residual_error(f, spec.task, lo, hi, panels);
        break;
    }
  } else if (metric == "residual") {
    if (g_text.empty())
      throw std::invalid_argument("--metric residual needs --g");
    if (interval.size() != 2)
      throw std::invalid_argument("--metric residual needs --interval a b");
    sfl::TaskSpec task = sfl::make_task(sfl::TaskKind::Ode, g_text,
                                        {interval[0], interval[1]});
    value = sfl::residual_error(f, task, interval[0], interval[1], panels);
  } else if (metric == "antideriv") {
    if (integrand_text.empty())
      throw std::invalid_argument("--metric antideriv needs --integrand");
    if (interval.size() != 2)
      throw std::invalid_argument("--metric antideriv needs --interval a b");
    sfl::Expr p = sfl::parse(integrand_text);
    value = sfl::antideriv_error(f, p, interval[0], interval[1], panels);
  } else if (metric == "erf") {
    value = sfl::erf_check(f, panels);
  } else {
    throw std::invalid_argument(
        "pass --task FILE or --metric residual|antideriv|erf");
  }
  std::printf("%.6g\n", value);
  return 0;
}

int run_plot(const std::string& in_path, const std::string& expr_text,
             const std::string& task_path, const std::string& csv_path,
             const std::string& ref_text, int points,
             std::vector<double> interval) {
  sfl::Expr f;
  std::optional<sfl::RunSpec> spec;

  if (!in_path.empty()) {
    std::ifstream in(in_path);
    if (!in) throw std::invalid_argument("cannot open '" + in_path + "'");
    ordered_json doc = ordered_json::parse(in);
    if (!doc.contains("best") || doc.at("best").is_null())
      throw std::invalid_argument("result file has no best expression");
    f = sfl::expr_from_json(doc.at("best").at("expression_tree"));
    spec = sfl::parse_runspec(doc.at("spec"));
  } else if (!expr_text.empty()) {
    f = sfl::parse(expr_text);
    if (!task_path.empty()) spec = sfl::load_runspec_file(task_path);
  } else {
    throw std::invalid_argument("pass --in result.json or --expr EXPR");
  }

  double lo = -1.0, hi = 1.0;
  if (interval.size() == 2) {
    lo = interval[0];
    hi = interval[1];
  } else if (spec) {
    lo = spec->task.domain.lo;
    hi = spec->task.domain.hi;
  }
  if (!(lo < hi)) throw std::invalid_argument("empty plot interval");

  std::vector<double> xs = linspace(lo, hi, points);
  std::optional<std::vector<double>> reference;
  if (!ref_text.empty()) {
    sfl::Expr ref = sfl::parse(ref_text);
    std::vector<double> rv(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) rv[i] = sfl::eval(ref, xs[i]);
    reference = std::move(rv);
  } else if (spec) {
    reference = reference_column(spec->task, xs, f);
  }

  sfl::TaskSpec for_resid;  // default residual is the constant 0
  if (spec) for_resid = spec->task;
  write_file_atomic(csv_path, curve_csv(for_resid, f, xs, reference));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learns symbolic expressions that solve equations"};
  app.require_subcommand(1);

  auto* s_solve = app.add_subcommand("solve", "train on a task spec");
  std::string spec_path, out_path, csv_path;
  int threads = default_threads();
  bool progress = false, timing = false;
  s_solve->add_option("--spec", spec_path, "task spec JSON file")->required();
  s_solve->add_option("--out", out_path, "result JSON path")->required();
  s_solve->add_option("--csv", csv_path, "also write the best curve as CSV");
  s_solve->add_option("--threads", threads,
                      "worker threads over restarts (env SFL_THREADS)");
  s_solve->add_flag("--progress", progress, "progress lines on stdout");
  s_solve->add_flag("--timing", timing, "include wall_seconds in the result");

  auto* s_eval = app.add_subcommand("eval", "score an expression");
  std::string expr_text, task_path, metric, g_text, integrand_text;
  std::vector<double> interval;
  int panels = 2000;
  s_eval->add_option("--expr", expr_text, "candidate expression")->required();
  s_eval->add_option("--task", task_path, "score against this task spec");
  s_eval->add_option("--metric", metric, "residual | antideriv | erf");
  s_eval->add_option("--g", g_text, "residual text for --metric residual");
  s_eval->add_option("--integrand", integrand_text,
                     "integrand for --metric antideriv");
  s_eval->add_option("--interval", interval, "evaluation interval a b")
      ->expected(2);
  s_eval->add_option("--panels", panels, "quadrature panels");

  auto* s_plot = app.add_subcommand("plot", "sample a curve to CSV");
  std::string in_path, plot_expr, plot_task, plot_csv, ref_text;
  int points = 1000;
  std::vector<double> plot_interval;
  s_plot->add_option("--in", in_path, "result JSON from solve");
  s_plot->add_option("--expr", plot_expr, "expression instead of --in");
  s_plot->add_option("--task", plot_task, "task spec for the residual column");
  s_plot->add_option("--csv", plot_csv, "output CSV path")->required();
  s_plot->add_option("--ref", ref_text, "reference expression column");
  s_plot->add_option("--points", points, "grid points");
  s_plot->add_option("--interval", plot_interval, "plot interval a b")
      ->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (s_solve->parsed())
      return run_solve(spec_path, out_path, csv_path, threads, progress,
                       timing);
    if (s_eval->parsed())
      return run_eval(expr_text, task_path, metric, g_text, integrand_text,
                      interval, panels);
    if (s_plot->parsed())
      return run_plot(in_path, plot_expr, plot_task, plot_csv, ref_text,
                      points, plot_interval);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
