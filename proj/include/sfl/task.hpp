#ifndef SFL_TASK_HPP
#define SFL_TASK_HPP

#include <Eigen/Core>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sfl/model.hpp"

// Task definitions: each problem kind reduces to a residual g(x, y, y1, y2)
// whose mean squared value over the domain is driven to zero, plus optional
// pointwise constraints sum_i (f^(n_i)(x_i) - y_i)^2 weighted by lambda.

namespace sfl {

enum class TaskKind { Ode, Integrate, Functional, Inverse, Root, Regression };

struct Constraint {
  double x = 0.0;
  double y = 0.0;
  int order = 0;  // 0: f(x)=y, 1: f'(x)=y, 2: f''(x)=y
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct TaskSpec {
  TaskKind kind = TaskKind::Ode;
  Expr residual;                    // always in terms of x, y, y1, y2
  std::optional<Expr> source;       // the p(x) that produced the residual
  Interval domain{-1.0, 1.0};
  std::vector<Interval> exclusions;
  std::vector<Constraint> constraints;
  double lambda = 1.0;
};

TaskKind task_kind_from_name(const std::string& name);
std::string task_kind_name(TaskKind kind);

// Builds the residual for the given kind:
//   ode/functional: text is g itself (ode may use y1/y2, functional may not)
//   integrate:      y1 - p(x)
//   inverse:        x - p(y)   (p given in x, substituted)
//   root:           p(y)
//   regression:     residual 0; constraints carry the data
// throws std::invalid_argument for unsupported tokens, empty domains or
// exclusions reaching outside the domain
TaskSpec make_task(TaskKind kind, const std::string& text, Interval domain,
                   std::vector<Interval> exclusions = {},
                   std::vector<Constraint> constraints = {},
                   double lambda = 1.0);

// residual value at one point given the function jet
double residual_at(const TaskSpec& task, double x, const Jet& f);

// uniform over the domain minus the exclusion intervals (rejection sampling)
std::vector<double> sample_domain(const TaskSpec& task, int n,
                                  std::mt19937_64& rng);

struct LossResult {
  double err = 0.0;          // mean clipped residual^2 + lambda * constraints
  Eigen::VectorXd grad;
  int bad_samples = 0;       // residuals that came out non-finite
  int bad_gradients = 0;     // finite residuals whose backward pass blew up
  bool all_bad = false;      // every batch sample was non-finite
};

// Reusable evaluator: owns the compiled residual program and scratch tape.
// Non-finite samples contribute zero gradient and a fixed 1e12 to err; if
// the whole batch is non-finite err is NaN and all_bad is set.
class LossEvaluator {
 public:
  LossEvaluator(const TaskSpec& task, const SflConfig& cfg);

  LossResult compute(const SflParams& params, GateMode mode,
                     std::span<const double> batch,
                     bool with_constraints = true);

  const Program& program() const { return prog_; }

 private:
  TaskSpec task_;
  SflConfig cfg_;
  Program prog_;
  Tape tape_;
  Eigen::VectorXd sample_grad_;  // per-sample scratch, checked before merging
};

// one-shot convenience wrapper around LossEvaluator
LossResult loss(const TaskSpec& task, const SflParams& params,
                const SflConfig& cfg, GateMode mode,
                std::span<const double> batch, bool with_constraints = true);

// Err of a fixed expression: mean squared residual over the given points
// (exact symbolic derivatives stand in for f', f'') plus lambda-weighted
// constraint error. Used for validation of extracted candidates.
double expression_err(const TaskSpec& task, const Expr& f,
                      std::span<const double> points,
                      bool with_constraints = true);

}  // namespace sfl

#endif
