#pragma once

// Training loop: a base-loss warm-up, then the combined objective with bags
// re-formed from the current predictions on every step. Validation AUUC
// drives checkpoint selection and early stopping.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "milup/data.hpp"
#include "milup/metrics.hpp"
#include "milup/mil.hpp"
#include "milup/models.hpp"

namespace milup {

struct TrainConfig {
  ModelKind kind = ModelKind::kTarnet;
  std::vector<std::size_t> hidden_sizes{1024, 512, 256};
  double learning_rate = 1e-3;
  double alpha = 1e-3;
  std::size_t batch_size = 1024;
  std::size_t bag_size = 64;
  std::size_t max_steps = 3000;
  // Unset means 20% of max_steps.
  std::optional<std::size_t> warmup_steps;
  std::size_t eval_every = 500;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  BagMode mode = BagMode::kClustered;
  bool standardize = true;
  // 0 trains on the MIL term alone.
  double base_weight = 1.0;
  std::size_t n_points = 100;
  // When set, a diverging batch is written here before aborting.
  std::filesystem::path diagnostics_dir;

  std::size_t resolved_warmup() const { return warmup_steps.value_or(max_steps / 5); }
  void validate() const;
};

struct HistoryEntry {
  std::size_t step = 0;
  double l_base = 0.0;  // mean over the steps since the previous evaluation
  double l_mil = 0.0;   // 0 while the MIL term is inactive
  double valid_auuc = 0.0;
};

struct TrainReport {
  TrainConfig config;
  std::vector<HistoryEntry> history;
  std::size_t best_step = 0;
  double best_valid_auuc = 0.0;
  double test_auuc = 0.0;
  std::size_t steps_run = 0;
  bool early_stopped = false;
  // Batches in which an arm was absent (its loss contributed 0).
  std::size_t single_arm_batches = 0;
  // Batches in the MIL phase with no bag containing both arms.
  std::size_t batches_without_usable_bags = 0;
  double wall_clock_s = 0.0;
};

struct TrainResult {
  UpliftModel model;  // best-validation checkpoint
  TrainReport report;
  UpliftCurve test_curve;
};

TrainResult train(const DataSplits& splits, const TrainConfig& config);

struct EvalResult {
  double auuc = 0.0;
  UpliftCurve curve;
};

EvalResult evaluate(const UpliftModel& model, const Dataset& ds, std::size_t n_points = 100);

struct RunOutcome {
  std::uint64_t seed = 0;
  std::optional<TrainResult> result;
  std::string error;  // set when the run aborted
};

struct RepeatResult {
  std::vector<RunOutcome> runs;  // ordered by seed
  std::optional<RunAggregate> aggregate;  // over completed runs
  std::size_t failures = 0;
};

// Runs seeds config.seed .. config.seed + n_runs - 1 on up to `jobs` threads.
// Results do not depend on `jobs`.
RepeatResult repeat_runs(const DataSplits& splits, const TrainConfig& config, std::size_t n_runs,
                         std::size_t jobs = 1);

}  // namespace milup
