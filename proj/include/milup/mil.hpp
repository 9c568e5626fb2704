#pragma once

// Bag-level regularization for two-model uplift networks.
//
// A mini-batch is split into equal-sized bags of instances with adjacent
// predicted uplift. Each bag gets an inverse-propensity weighted label
//
//   y_bag = sum_{i in T} y_i / u_t - sum_{j in C} y_j / (1 - u_t)
//
// and a prediction of the same form built from the factual-arm
// probabilities,
//
//   h_bag = sum_{i in T} p_t[i] / u_t - sum_{j in C} p_c[j] / (1 - u_t),
//
// where u_t is the treated fraction of the whole mini-batch. The
// regularizer is L_mil = sum_k (y_bag_k - h_bag_k)^2 over bags containing
// both arms, and the training objective is L = L_base + alpha * L_mil.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "milup/data.hpp"
#include "milup/models.hpp"

namespace milup {

enum class BagMode {
  kClustered,  // sort by predicted uplift, cut consecutive runs
  kRandom,     // shuffle, cut consecutive runs
};

std::string_view to_string(BagMode mode);
BagMode parse_bag_mode(std::string_view name);

struct BagPartition {
  std::vector<std::vector<std::size_t>> bags;  // indices into the batch
  std::size_t bag_size = 0;
  BagMode mode = BagMode::kClustered;
};

// Instances beyond the last full bag are left out. `seed` only matters for
// kRandom. bag_size larger than the batch gives zero bags and a warning.
BagPartition cluster_bags(std::span<const double> uplift, std::size_t bag_size, BagMode mode,
                          std::uint64_t seed = 0);

// nullopt when the bag lacks one of the arms.
std::optional<double> bag_label(std::span<const int> outcome, std::span<const int> treatment,
                                std::span<const std::size_t> bag, double u_t);
std::optional<double> bag_prediction(std::span<const double> p_t, std::span<const double> p_c,
                                     std::span<const int> treatment,
                                     std::span<const std::size_t> bag, double u_t);

struct BagStats {
  double y_bag = 0.0;
  double h_bag = 0.0;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  bool usable = false;
};

BagStats bag_stats(std::span<const int> outcome, std::span<const int> treatment,
                   std::span<const double> p_t, std::span<const double> p_c,
                   std::span<const std::size_t> bag, double u_t);

struct MilLoss {
  double value = 0.0;
  std::vector<double> residuals;  // y_bag - h_bag per bag, 0 for unusable bags
  std::size_t usable_bags = 0;
};

MilLoss mil_loss(std::span<const BagStats> stats);

struct LossBreakdown {
  double l_base = 0.0;
  double l_mil = 0.0;
  double alpha = 0.0;
  double base_weight = 1.0;  // 0 for the MIL-only ablation
  double l = 0.0;            // base_weight * l_base + alpha * l_mil
  std::size_t usable_bags = 0;
  bool treated_empty = false;
  bool control_empty = false;
};

struct MilSettings {
  double alpha = 1e-3;
  std::size_t bag_size = 64;
  BagMode mode = BagMode::kClustered;
  double base_weight = 1.0;
  std::uint64_t shuffle_seed = 0;  // kRandom bags
};

struct Batch {
  Matrix x;
  std::vector<int> treatment;
  std::vector<int> outcome;
  double u_t = 0.0;
};

Batch make_batch(const Dataset& ds, const MiniBatch& mb);
Batch make_batch(const Dataset& ds, std::span<const std::size_t> rows);

struct CombinedResult {
  LossBreakdown loss;
  ModelGrads grads;
  BagPartition partition;
};

// Predicts, forms bags from the predicted uplift and differentiates the
// combined objective with the bag assignment held fixed.
CombinedResult combined_loss_and_grads(const UpliftModel& model, const Batch& batch,
                                       const MilSettings& settings);

// Same objective for a given partition. `frozen_feed` is forwarded to
// forward_model (DDR stop-gradient input).
CombinedResult combined_loss_for_partition(const UpliftModel& model, const Batch& batch,
                                           const MilSettings& settings,
                                           const BagPartition& partition,
                                           std::span<const double> frozen_feed = {});

// Unweighted bag sums: lhs = sum_b (sum_j (y + e) - sum_j y)^2 and
// rhs = sum_b (sum_j e)^2.
std::pair<double, double> variance_identity_check(std::span<const double> labels,
                                                  std::span<const double> noise,
                                                  const BagPartition& partition);

}  // namespace milup
