#include "sfl/task.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sfl {

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "ode") return TaskKind::Ode;
  if (name == "integrate") return TaskKind::Integrate;
  if (name == "functional") return TaskKind::Functional;
  if (name == "inverse") return TaskKind::Inverse;
  if (name == "root") return TaskKind::Root;
  if (name == "regression") return TaskKind::Regression;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Ode: return "ode";
    case TaskKind::Integrate: return "integrate";
    case TaskKind::Functional: return "functional";
    case TaskKind::Inverse: return "inverse";
    case TaskKind::Root: return "root";
    case TaskKind::Regression: return "regression";
  }
  return "?";
}

namespace {

void require_x_only(const Expr& p, const char* what) {
  if (uses_var(p, Var::Y) || uses_var(p, Var::DY) || uses_var(p, Var::D2Y))
    throw std::invalid_argument(std::string(what) +
                                " may only reference x");
}

double merged_exclusion_length(std::vector<Interval> ex) {
  if (ex.empty()) return 0.0;
  std::sort(ex.begin(), ex.end(),
            [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  double total = 0.0;
  double lo = ex[0].lo, hi = ex[0].hi;
  for (size_t i = 1; i < ex.size(); ++i) {
    if (ex[i].lo <= hi) {
      hi = std::max(hi, ex[i].hi);
    } else {
      total += hi - lo;
      lo = ex[i].lo;
      hi = ex[i].hi;
    }
  }
  total += hi - lo;
  return total;
}

}  // namespace

TaskSpec make_task(TaskKind kind, const std::string& text, Interval domain,
                   std::vector<Interval> exclusions,
                   std::vector<Constraint> constraints, double lambda) {
  if (!std::isfinite(domain.lo) || !std::isfinite(domain.hi) ||
      !(domain.lo < domain.hi))
    throw std::invalid_argument("domain must be a nonempty interval [a, b]");
  for (const Interval& ex : exclusions) {
    if (!(ex.lo < ex.hi))
      throw std::invalid_argument("exclusion interval is empty or reversed");
    if (ex.lo < domain.lo || ex.hi > domain.hi)
      throw std::invalid_argument("exclusion interval reaches outside the domain");
  }
  if (merged_exclusion_length(exclusions) >=
      (domain.hi - domain.lo) * (1.0 - 1e-12))
    throw std::invalid_argument("exclusions cover the whole domain");
  if (!std::isfinite(lambda) || lambda < 0.0)
    throw std::invalid_argument("lambda must be finite and >= 0");
  for (const Constraint& c : constraints) {
    if (!std::isfinite(c.x) || !std::isfinite(c.y))
      throw std::invalid_argument("constraint values must be finite");
    if (c.order < 0 || c.order > 2)
      throw std::invalid_argument("constraint order must be 0, 1 or 2");
  }

  TaskSpec task;
  task.kind = kind;
  task.domain = domain;
  task.exclusions = std::move(exclusions);
  task.constraints = std::move(constraints);
  task.lambda = lambda;

  switch (kind) {
    case TaskKind::Ode:
      task.residual = parse(text);
      break;
    case TaskKind::Functional: {
      task.residual = parse(text);
      if (uses_var(task.residual, Var::DY) || uses_var(task.residual, Var::D2Y))
        throw std::invalid_argument(
            "functional equations may not reference y1 or y2");
      break;
    }
    case TaskKind::Integrate: {
      Expr p = parse(text);
      require_x_only(p, "the integrand");
      task.source = p;
      task.residual = Expr::variable(Var::DY) - p;
      break;
    }
    case TaskKind::Inverse: {
      Expr p = parse(text);
      require_x_only(p, "the function to invert");
      task.source = p;
      task.residual =
          Expr::variable(Var::X) - substitute(p, Var::X, Expr::variable(Var::Y));
      break;
    }
    case TaskKind::Root: {
      Expr p = parse(text);
      require_x_only(p, "the root target");
      task.source = p;
      task.residual = substitute(p, Var::X, Expr::variable(Var::Y));
      break;
    }
    case TaskKind::Regression: {
      if (!text.empty() && text != "0")
        throw std::invalid_argument(
            "regression tasks take their data from constraints, not a residual");
      if (task.constraints.empty())
        throw std::invalid_argument("regression task needs at least one constraint");
      task.residual = Expr::constant(0.0);
      break;
    }
  }
  return task;
}

double residual_at(const TaskSpec& task, double x, const Jet& f) {
  return eval(task.residual, EvalPoint{x, f.v, f.d1, f.d2});
}

std::vector<double> sample_domain(const TaskSpec& task, int n,
                                  std::mt19937_64& rng) {
  if (n < 0) throw std::invalid_argument("sample count must be >= 0");
  std::uniform_real_distribution<double> dist(task.domain.lo, task.domain.hi);
  std::vector<double> out;
  out.reserve(n);
  const long cap = 10000L * std::max(n, 1);
  long attempts = 0;
  while (static_cast<int>(out.size()) < n) {
    if (++attempts > cap)
      throw std::runtime_error("domain sampling rejected too many draws");
    double x = dist(rng);
    bool excluded = false;
    for (const Interval& ex : task.exclusions)
      if (x >= ex.lo && x <= ex.hi) {
        excluded = true;
        break;
      }
    if (!excluded) out.push_back(x);
  }
  return out;
}

LossEvaluator::LossEvaluator(const TaskSpec& task, const SflConfig& cfg)
    : task_(task), cfg_(cfg) {
  cfg_.validate();
  prog_ = task_.kind == TaskKind::Regression
              ? build_forward_program(cfg_)
              : build_residual_program(cfg_, task_.residual);
}

LossResult LossEvaluator::compute(const SflParams& params, GateMode mode,
                                  std::span<const double> batch,
                                  bool with_constraints) {
  LossResult res;
  res.grad = Eigen::VectorXd::Zero(prog_.n_params);
  if (sample_grad_.size() != prog_.n_params)
    sample_grad_ = Eigen::VectorXd::Zero(prog_.n_params);
  std::span<const double> theta{params.theta.data(),
                                (size_t)params.theta.size()};
  std::span<double> grad{sample_grad_.data(), (size_t)sample_grad_.size()};

  // backward goes into the scratch vector first so one exploding sample can
  // be dropped instead of poisoning the whole batch gradient
  auto merge_sample_grad = [&] {
    if (sample_grad_.allFinite())
      res.grad += sample_grad_;
    else
      ++res.bad_gradients;
  };

  const int n = static_cast<int>(batch.size());
  if (task_.kind != TaskKind::Regression && n > 0) {
    double sum = 0.0;
    for (double x : batch) {
      double r = tape_forward(prog_, mode, theta, x, tape_).v;
      if (!std::isfinite(r)) {
        ++res.bad_samples;
        sum += 1e12;
        continue;
      }
      double rc = std::clamp(r, -kResidualClip, kResidualClip);
      sum += rc * rc;
      // the clip is flat outside its band, so clipped samples send no gradient
      if (std::abs(r) < kResidualClip) {
        sample_grad_.setZero();
        tape_backward(prog_, mode, tape_, Jet{2.0 * rc / n, 0.0, 0.0}, grad);
        merge_sample_grad();
      }
    }
    res.err = sum / n;
    if (res.bad_samples == n) {
      res.err = std::numeric_limits<double>::quiet_NaN();
      res.all_bad = true;
    }
  }

  if (with_constraints && task_.lambda > 0.0) {
    for (const Constraint& c : task_.constraints) {
      tape_forward(prog_, mode, theta, c.x, tape_);
      const Jet f = tape_.val[prog_.model_output];
      double comp = c.order == 0 ? f.v : (c.order == 1 ? f.d1 : f.d2);
      if (!std::isfinite(comp)) {
        res.err += task_.lambda * 1e12;
        continue;
      }
      double diff = comp - c.y;
      res.err += task_.lambda * diff * diff;
      Jet seed{};
      double s = 2.0 * task_.lambda * diff;
      if (c.order == 0) seed.v = s;
      else if (c.order == 1) seed.d1 = s;
      else seed.d2 = s;
      sample_grad_.setZero();
      tape_backward(prog_, mode, tape_, seed, grad, prog_.model_output);
      merge_sample_grad();
    }
  }
  return res;
}

LossResult loss(const TaskSpec& task, const SflParams& params,
                const SflConfig& cfg, GateMode mode,
                std::span<const double> batch, bool with_constraints) {
  LossEvaluator ev(task, cfg);
  return ev.compute(params, mode, batch, with_constraints);
}

double expression_err(const TaskSpec& task, const Expr& f,
                      std::span<const double> points, bool with_constraints) {
  Expr f1 = differentiate(f, Var::X);
  Expr f2 = differentiate(f1, Var::X);

  double err = 0.0;
  const int n = static_cast<int>(points.size());
  if (task.kind != TaskKind::Regression && n > 0) {
    double sum = 0.0;
    for (double x : points) {
      EvalPoint pt{x, 0, 0, 0};
      pt.y = eval(f, pt);
      pt.y1 = eval(f1, pt);
      pt.y2 = eval(f2, pt);
      double r = eval(task.residual, pt);
      if (!std::isfinite(r)) {
        sum += 1e12;
        continue;
      }
      double rc = std::clamp(r, -kResidualClip, kResidualClip);
      sum += rc * rc;
    }
    err = sum / n;
  }

  if (with_constraints && task.lambda > 0.0) {
    for (const Constraint& c : task.constraints) {
      EvalPoint pt{c.x, 0, 0, 0};
      const Expr& which = c.order == 0 ? f : (c.order == 1 ? f1 : f2);
      double comp = eval(which, pt);
      if (!std::isfinite(comp)) {
        err += task.lambda * 1e12;
        continue;
      }
      double diff = comp - c.y;
      err += task.lambda * diff * diff;
    }
  }
  return err;
}

}  // namespace sfl
