#ifndef SFL_TRAIN_HPP
#define SFL_TRAIN_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "sfl/task.hpp"

// Adam training with random restarts. Each restart is fully determined by
// base_seed + restart index, so results are reproducible regardless of how
// many worker threads run the restarts.

namespace sfl {

struct TrainConfig {
  int restarts = 20;
  int iterations = 6000;
  double soft_fraction = 0.25;  // leading fraction run with soft gates
  int pool_size = 5000;
  int batch_size = 512;
  int validation_size = 1024;
  double step_size = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t base_seed = 0;
  double extract_tol = 1e-6;
  std::optional<double> early_stop;  // stop a restart once train Err < this
  int threads = 1;
  bool progress = false;  // stdout progress lines every 100 iterations
};

struct CurvePoint {
  int iteration = 0;
  GateMode mode = GateMode::Soft;
  double err = 0.0;
};

struct RestartRecord {
  uint64_t seed = 0;
  SflParams params;
  Expr expression;
  double validation_err = 0.0;
  bool diverged = false;
  std::vector<CurvePoint> curve;  // sampled every 100 iterations plus the
                                  // soft/discrete boundary
};

struct RunResult {
  std::vector<RestartRecord> restarts;
  int best_index = -1;  // -1 when every restart diverged
  bool all_diverged() const { return best_index < 0; }
  const RestartRecord& best() const { return restarts[best_index]; }
};

// One restart: init from seed, Adam on batches drawn from a fixed sample
// pool, soft gates for ceil(soft_fraction * iterations) steps then discrete.
// Validation Err is computed on the extracted expression over a fresh sample
// set drawn from a seed-derived stream (so it is independent of how long
// training ran). A restart that sees 50 consecutive non-finite Err values or
// non-finite parameters is flagged diverged and abandoned.
RestartRecord train_once(const TaskSpec& task, const SflConfig& cfg,
                         const TrainConfig& tcfg, uint64_t seed);

// All restarts (seeds base_seed + 0 .. restarts-1); best = lowest validation
// Err among the non-diverged, ties broken toward the lower restart index.
RunResult solve(const TaskSpec& task, const SflConfig& cfg,
                const TrainConfig& tcfg);

}  // namespace sfl

#endif
