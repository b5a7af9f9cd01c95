#ifndef SFL_RUNSPEC_HPP
#define SFL_RUNSPEC_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfl/evaluate.hpp"
#include "sfl/train.hpp"

// JSON run specs and result documents. Field names are the stable public
// interface of the CLI; unknown keys are rejected by name so typos fail
// loudly instead of silently falling back to defaults.

namespace sfl {

using ordered_json = nlohmann::ordered_json;

struct RunSpec {
  TaskSpec task;
  SflConfig model;
  TrainConfig train;
  // optional extra metric: residual_error of the winner over these intervals
  std::vector<Interval> residual_intervals;
};

// throws std::invalid_argument with a dotted key path on unknown keys,
// wrong types or invalid values
RunSpec parse_runspec(const ordered_json& doc);
RunSpec load_runspec_file(const std::string& path);

ordered_json expr_to_json(const Expr& e);
Expr expr_from_json(const ordered_json& doc);

// result document: spec echo, winning expression (text + tree), per-restart
// records with loss curves, optional metrics, library version. wall_seconds
// is added only when timing was requested, keeping default output
// byte-deterministic.
ordered_json result_to_json(const RunSpec& spec, const RunResult& result,
                            std::optional<double> wall_seconds);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sfl

#endif
