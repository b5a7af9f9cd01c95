#include "sfl/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace sfl {

namespace {

// validation points come from their own stream so they do not depend on how
// many draws training consumed (early stop must not shift them)
constexpr uint64_t kValidationStream = 0x9E3779B97F4A7C15ull;

void check_config(const TrainConfig& t) {
  if (t.restarts < 1) throw std::invalid_argument("restarts must be >= 1");
  if (t.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (t.soft_fraction < 0.0 || t.soft_fraction > 1.0)
    throw std::invalid_argument("soft_fraction must be in [0, 1]");
  if (t.pool_size < 1) throw std::invalid_argument("pool_size must be >= 1");
  if (t.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (t.validation_size < 1)
    throw std::invalid_argument("validation_size must be >= 1");
  if (!(t.step_size > 0.0)) throw std::invalid_argument("step_size must be > 0");
  if (t.threads < 1) throw std::invalid_argument("threads must be >= 1");
}

}  // namespace

RestartRecord train_once(const TaskSpec& task, const SflConfig& cfg,
                         const TrainConfig& tcfg, uint64_t seed) {
  check_config(tcfg);
  std::mt19937_64 rng(seed);

  RestartRecord rec;
  rec.seed = seed;
  SflParams params = init_params(cfg, rng);
  LossEvaluator ev(task, cfg);

  const bool uses_batches = task.kind != TaskKind::Regression;
  std::vector<double> pool;
  if (uses_batches) pool = sample_domain(task, tcfg.pool_size, rng);
  std::uniform_int_distribution<int> pick(0, tcfg.pool_size - 1);
  std::vector<double> batch;

  const int soft_steps = static_cast<int>(
      std::ceil(tcfg.soft_fraction * static_cast<double>(tcfg.iterations)));

  Eigen::ArrayXd m = Eigen::ArrayXd::Zero(params.theta.size());
  Eigen::ArrayXd v = Eigen::ArrayXd::Zero(params.theta.size());
  int adam_t = 0;
  int bad_streak = 0;

  auto record = [&](int t, GateMode mode, double err) {
    if (!rec.curve.empty() && rec.curve.back().iteration == t) return;
    rec.curve.push_back({t, mode, err});
  };

  for (int t = 0; t < tcfg.iterations; ++t) {
    GateMode mode = t < soft_steps ? GateMode::Soft : GateMode::Discrete;

    if (uses_batches) {
      batch.resize(tcfg.batch_size);
      for (double& x : batch) x = pool[pick(rng)];
    }
    LossResult L = ev.compute(params, mode, batch, true);

    if (t % 100 == 0 || t == soft_steps - 1 || t == soft_steps)
      record(t, mode, L.err);
    if (tcfg.progress && t % 100 == 0)
      std::printf("restart %lld iter %d %s err %.6g\n",
                  static_cast<long long>(seed - tcfg.base_seed), t,
                  mode == GateMode::Soft ? "soft" : "discrete", L.err);

    if (!std::isfinite(L.err)) {
      if (++bad_streak >= 50) {
        rec.diverged = true;
        break;
      }
      continue;  // skip the update, the gradient is meaningless
    }
    bad_streak = 0;

    if (tcfg.early_stop && L.err < *tcfg.early_stop) break;

    ++adam_t;
    Eigen::ArrayXd g = L.grad.array();
    m = tcfg.beta1 * m + (1.0 - tcfg.beta1) * g;
    v = tcfg.beta2 * v + (1.0 - tcfg.beta2) * g.square();
    double bc1 = 1.0 - std::pow(tcfg.beta1, adam_t);
    double bc2 = 1.0 - std::pow(tcfg.beta2, adam_t);
    params.theta.array() -=
        tcfg.step_size * (m / bc1) / ((v / bc2).sqrt() + tcfg.adam_eps);

    if (!params.theta.allFinite()) {
      rec.diverged = true;
      break;
    }
  }

  rec.params = params;
  if (rec.diverged) {
    rec.validation_err = std::numeric_limits<double>::quiet_NaN();
    return rec;
  }

  rec.expression = extract(params, cfg, tcfg.extract_tol);
  std::mt19937_64 vrng(seed ^ kValidationStream);
  std::vector<double> vpoints;
  if (uses_batches) vpoints = sample_domain(task, tcfg.validation_size, vrng);
  rec.validation_err = expression_err(task, rec.expression, vpoints, true);
  return rec;
}

RunResult solve(const TaskSpec& task, const SflConfig& cfg,
                const TrainConfig& tcfg) {
  check_config(tcfg);
  RunResult out;
  out.restarts.resize(tcfg.restarts);

  const int workers = std::min(tcfg.threads, tcfg.restarts);
  if (workers <= 1) {
    for (int i = 0; i < tcfg.restarts; ++i) {
      out.restarts[i] = train_once(task, cfg, tcfg, tcfg.base_seed + i);
      if (tcfg.progress)
        std::printf("restart %d done: validation err %.6g%s\n", i,
                    out.restarts[i].validation_err,
                    out.restarts[i].diverged ? " (diverged)" : "");
    }
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto work = [&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= tcfg.restarts) return;
        try {
          out.restarts[i] = train_once(task, cfg, tcfg, tcfg.base_seed + i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int w = 0; w < workers; ++w) threads.emplace_back(work);
    for (std::thread& th : threads) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < tcfg.restarts; ++i) {
    const RestartRecord& r = out.restarts[i];
    if (r.diverged) continue;
    double e = std::isfinite(r.validation_err)
                   ? r.validation_err
                   : std::numeric_limits<double>::infinity();
    if (out.best_index < 0 || e < best) {
      out.best_index = i;
      best = e;
    }
  }
  return out;
}

}  // namespace sfl
