#include "milup/mil.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "milup/diagnostics.hpp"
#include "milup/error.hpp"

namespace milup {

std::string_view to_string(BagMode mode) {
  return mode == BagMode::kClustered ? "clustered" : "random";
}

BagMode parse_bag_mode(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "clustered") return BagMode::kClustered;
  if (lower == "random") return BagMode::kRandom;
  throw ConfigError("unknown bag mode '" + std::string(name) + "' (expected clustered or random)");
}

BagPartition cluster_bags(std::span<const double> uplift, std::size_t bag_size, BagMode mode,
                          std::uint64_t seed) {
  if (bag_size < 2) throw ConfigError("cluster_bags: bag size must be at least 2");
  for (double u : uplift) {
    if (!std::isfinite(u)) throw ConfigError("cluster_bags: non-finite uplift prediction");
  }
  BagPartition partition;
  partition.bag_size = bag_size;
  partition.mode = mode;
  const std::size_t n = uplift.size();
  if (bag_size > n) {
    warn("cluster_bags: bag size " + std::to_string(bag_size) + " exceeds batch size " +
         std::to_string(n) + "; no bags formed");
    return partition;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (mode == BagMode::kClustered) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return uplift[a] < uplift[b]; });
  } else {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  for (std::size_t start = 0; start + bag_size <= n; start += bag_size) {
    partition.bags.emplace_back(order.begin() + start, order.begin() + start + bag_size);
  }
  return partition;
}

namespace {

void check_propensity(double u_t) {
  if (!(u_t > 0.0 && u_t < 1.0)) {
    throw ConfigError("bag with both arms needs 0 < u_t < 1, got " + std::to_string(u_t));
  }
}

// Treated and control sums of `value(i)` over the bag; nullopt if an arm is
// absent.
template <typename F>
std::optional<double> weighted_difference(std::span<const int> treatment,
                                          std::span<const std::size_t> bag, double u_t,
                                          F value) {
  double treated = 0.0, control = 0.0;
  std::size_t nt = 0, nc = 0;
  for (std::size_t i : bag) {
    if (i >= treatment.size()) throw ShapeError("bag index out of range");
    if (treatment[i] == 1) {
      treated += value(i, true);
      ++nt;
    } else {
      control += value(i, false);
      ++nc;
    }
  }
  if (nt == 0 || nc == 0) return std::nullopt;
  check_propensity(u_t);
  return treated / u_t - control / (1.0 - u_t);
}

}  // namespace

std::optional<double> bag_label(std::span<const int> outcome, std::span<const int> treatment,
                                std::span<const std::size_t> bag, double u_t) {
  if (outcome.size() != treatment.size()) throw ShapeError("bag_label: length mismatch");
  return weighted_difference(treatment, bag, u_t,
                             [&](std::size_t i, bool) { return static_cast<double>(outcome[i]); });
}

std::optional<double> bag_prediction(std::span<const double> p_t, std::span<const double> p_c,
                                     std::span<const int> treatment,
                                     std::span<const std::size_t> bag, double u_t) {
  if (p_t.size() != treatment.size() || p_c.size() != treatment.size()) {
    throw ShapeError("bag_prediction: length mismatch");
  }
  return weighted_difference(treatment, bag, u_t,
                             [&](std::size_t i, bool treated) { return treated ? p_t[i] : p_c[i]; });
}

BagStats bag_stats(std::span<const int> outcome, std::span<const int> treatment,
                   std::span<const double> p_t, std::span<const double> p_c,
                   std::span<const std::size_t> bag, double u_t) {
  BagStats s;
  for (std::size_t i : bag) {
    if (i >= treatment.size()) throw ShapeError("bag index out of range");
    (treatment[i] == 1 ? s.n_treated : s.n_control) += 1;
  }
  s.usable = s.n_treated > 0 && s.n_control > 0;
  if (s.usable) {
    s.y_bag = *bag_label(outcome, treatment, bag, u_t);
    s.h_bag = *bag_prediction(p_t, p_c, treatment, bag, u_t);
  }
  return s;
}

MilLoss mil_loss(std::span<const BagStats> stats) {
  MilLoss out;
  out.residuals.assign(stats.size(), 0.0);
  for (std::size_t k = 0; k < stats.size(); ++k) {
    if (!stats[k].usable) continue;
    const double r = stats[k].y_bag - stats[k].h_bag;
    out.residuals[k] = r;
    out.value += r * r;
    ++out.usable_bags;
  }
  return out;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> rows) {
  Batch b;
  b.x = gather_rows(ds.features, rows);
  b.treatment.reserve(rows.size());
  b.outcome.reserve(rows.size());
  std::size_t treated = 0;
  for (std::size_t r : rows) {
    b.treatment.push_back(ds.treatment[r]);
    b.outcome.push_back(ds.outcome[r]);
    treated += ds.treatment[r];
  }
  b.u_t = rows.empty() ? 0.0 : static_cast<double>(treated) / static_cast<double>(rows.size());
  return b;
}

Batch make_batch(const Dataset& ds, const MiniBatch& mb) {
  Batch b = make_batch(ds, std::span<const std::size_t>(mb.rows));
  b.u_t = mb.u_t;
  return b;
}

namespace {

void check_settings(const Batch& batch, const MilSettings& settings) {
  if (!(settings.alpha >= 0.0)) throw ConfigError("combined loss: alpha must be non-negative");
  if (!(settings.base_weight >= 0.0)) {
    throw ConfigError("combined loss: base weight must be non-negative");
  }
  if (batch.x.rows() == 0) throw ConfigError("combined loss: empty batch");
}

CombinedResult combined_from_pass(const UpliftModel& model, const ModelPass& pass,
                                  const Batch& batch, const MilSettings& settings,
                                  BagPartition partition) {
  FactualLoss base = factual_bce(pass.p_t, pass.p_c, batch.treatment, batch.outcome);

  std::vector<BagStats> stats;
  stats.reserve(partition.bags.size());
  for (const auto& bag : partition.bags) {
    stats.push_back(bag_stats(batch.outcome, batch.treatment, pass.p_t, pass.p_c, bag, batch.u_t));
  }
  const MilLoss mil = mil_loss(stats);

  CombinedResult result;
  LossBreakdown& lb = result.loss;
  lb.l_base = base.loss;
  lb.l_mil = mil.value;
  lb.alpha = settings.alpha;
  lb.base_weight = settings.base_weight;
  lb.l = settings.base_weight == 1.0 ? base.loss + settings.alpha * mil.value
                                     : settings.base_weight * base.loss + settings.alpha * mil.value;
  lb.usable_bags = mil.usable_bags;
  lb.treated_empty = base.treated_empty;
  lb.control_empty = base.control_empty;

  std::vector<double>& gt = base.logit_grad_t;
  std::vector<double>& gc = base.logit_grad_c;
  if (settings.base_weight != 1.0) {
    for (double& g : gt) g *= settings.base_weight;
    for (double& g : gc) g *= settings.base_weight;
  }
  if (settings.alpha != 0.0) {
    // dL_mil/dh_k = -2 r_k; dh_k/dp_t[i] = 1/u_t, dh_k/dp_c[j] = -1/(1-u_t).
    for (std::size_t k = 0; k < partition.bags.size(); ++k) {
      if (!stats[k].usable) continue;
      const double dh = -2.0 * mil.residuals[k] * settings.alpha;
      for (std::size_t i : partition.bags[k]) {
        if (batch.treatment[i] == 1) {
          const double p = pass.p_t[i];
          gt[i] += dh / batch.u_t * p * (1.0 - p);
        } else {
          const double p = pass.p_c[i];
          gc[i] -= dh / (1.0 - batch.u_t) * p * (1.0 - p);
        }
      }
    }
  }
  result.grads = backward_model(model, pass, gt, gc);
  result.partition = std::move(partition);
  return result;
}

}  // namespace

CombinedResult combined_loss_for_partition(const UpliftModel& model, const Batch& batch,
                                           const MilSettings& settings,
                                           const BagPartition& partition,
                                           std::span<const double> frozen_feed) {
  check_settings(batch, settings);
  const ModelPass pass = forward_model(model, batch.x, frozen_feed);
  return combined_from_pass(model, pass, batch, settings, partition);
}

CombinedResult combined_loss_and_grads(const UpliftModel& model, const Batch& batch,
                                       const MilSettings& settings) {
  check_settings(batch, settings);
  const ModelPass pass = forward_model(model, batch.x);
  std::vector<double> uplift(pass.rows());
  for (std::size_t i = 0; i < uplift.size(); ++i) uplift[i] = pass.p_t[i] - pass.p_c[i];
  BagPartition partition =
      cluster_bags(uplift, settings.bag_size, settings.mode, settings.shuffle_seed);
  return combined_from_pass(model, pass, batch, settings, std::move(partition));
}

std::pair<double, double> variance_identity_check(std::span<const double> labels,
                                                  std::span<const double> noise,
                                                  const BagPartition& partition) {
  if (labels.size() != noise.size()) throw ShapeError("variance_identity_check: length mismatch");
  double lhs = 0.0, rhs = 0.0;
  for (const auto& bag : partition.bags) {
    double noisy = 0.0, clean = 0.0, eps = 0.0;
    for (std::size_t i : bag) {
      if (i >= labels.size()) throw ShapeError("variance_identity_check: index out of range");
      noisy += labels[i] + noise[i];
      clean += labels[i];
      eps += noise[i];
    }
    lhs += (noisy - clean) * (noisy - clean);
    rhs += eps * eps;
  }
  return {lhs, rhs};
}

}  // namespace milup
