#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "milup/diagnostics.hpp"
#include "milup/metrics.hpp"
#include "milup/mil.hpp"
#include "milup/models.hpp"

namespace milup::testing {

// Collects warnings for the lifetime of the object instead of printing them.
class WarningLog {
 public:
  WarningLog() : capture_([this](std::string_view m) { messages_.emplace_back(m); }) {}
  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  ScopedWarningCapture capture_;
};

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Matrix m(rows, cols);
  for (double& v : m.values()) v = d(rng);
  return m;
}

// Random biases move rectifier pre-activations away from zero, where central
// differences would straddle the kink.
inline void jitter_biases(UpliftModel& model, std::mt19937_64& rng, double sd = 0.5) {
  std::normal_distribution<double> d(0.0, sd);
  for (auto& net : model.networks)
    for (auto& layer : net.layers)
      for (double& b : layer.bias) b = d(rng);
}

// Batch with both arms and both outcomes present.
inline Batch random_batch(std::size_t n, std::size_t dims, std::mt19937_64& rng) {
  Batch b;
  b.x = gaussian_matrix(n, dims, rng);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    b.treatment.push_back(i < 2 ? static_cast<int>(i) : coin(rng));
    b.outcome.push_back(i < 4 ? static_cast<int>(i / 2 % 2) : coin(rng));
  }
  std::size_t treated = 0;
  for (int t : b.treatment) treated += t;
  b.u_t = static_cast<double>(treated) / static_cast<double>(n);
  return b;
}

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences of `loss` against `analytic` over every parameter of
// every network in the model.
inline FdReport finite_difference_check(UpliftModel model, const ModelGrads& analytic,
                                        const std::function<double(const UpliftModel&)>& loss,
                                        double h = 1e-5) {
  FdReport r;
  auto probe = [&](double& slot, double expected) {
    const double saved = slot;
    slot = saved + h;
    const double up = loss(model);
    slot = saved - h;
    const double down = loss(model);
    slot = saved;
    r.max_rel_error = std::max(r.max_rel_error, rel_error(expected, (up - down) / (2.0 * h)));
    ++r.checked;
  };
  for (std::size_t n = 0; n < model.networks.size(); ++n) {
    for (std::size_t k = 0; k < model.networks[n].layers.size(); ++k) {
      Layer& layer = model.networks[n].layers[k];
      const Layer& g = analytic.networks[n].layers[k];
      auto w = layer.weight.values();
      auto gw = g.weight.values();
      for (std::size_t i = 0; i < w.size(); ++i) probe(w[i], gw[i]);
      for (std::size_t i = 0; i < layer.bias.size(); ++i) probe(layer.bias[i], g.bias[i]);
    }
  }
  return r;
}

// Combined objective with the partition and, for DDR, the fed-in control
// probability held fixed at their values for the unperturbed model.
inline FdReport combined_fd_check(const UpliftModel& model, const Batch& batch,
                                  const MilSettings& settings, const BagPartition& partition) {
  std::vector<double> feed;
  if (model.kind == ModelKind::kDdr) feed = forward_model(model, batch.x).p_c;
  const CombinedResult analytic =
      combined_loss_for_partition(model, batch, settings, partition, feed);
  return finite_difference_check(model, analytic.grads, [&](const UpliftModel& m) {
    return combined_loss_for_partition(m, batch, settings, partition, feed).loss.l;
  });
}

// Materializes every selection: each arm is ranked by repeatedly picking the
// highest remaining score (lowest index among equals), and each cut takes
// the smallest m with m * n_points >= k * N. A cut inside a block of equal
// scores counts the block's positives fractionally unless ties == kIndex.
inline double brute_force_auuc(const std::vector<double>& scores, const std::vector<int>& outcome,
                               const std::vector<int>& treatment, std::size_t n_points,
                               TieHandling ties) {
  auto rank_arm = [&](int arm) {
    std::vector<std::size_t> remaining, ranked;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (treatment[i] == arm) remaining.push_back(i);
    while (!remaining.empty()) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < remaining.size(); ++j)
        if (scores[remaining[j]] > scores[remaining[best]]) best = j;
      ranked.push_back(remaining[best]);
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return ranked;
  };
  auto rate = [&](const std::vector<std::size_t>& ranked, std::size_t k) {
    const std::size_t total = ranked.size();
    std::size_t m = 0;
    while (m * n_points < k * total) ++m;
    std::size_t start = m - 1, end = m;
    while (start > 0 && scores[ranked[start - 1]] == scores[ranked[m - 1]]) --start;
    while (end < total && scores[ranked[end]] == scores[ranked[m - 1]]) ++end;
    std::size_t before = 0, in_block = 0, upto_m = 0;
    for (std::size_t p = 0; p < start; ++p) before += static_cast<std::size_t>(outcome[ranked[p]]);
    for (std::size_t p = start; p < end; ++p) in_block += static_cast<std::size_t>(outcome[ranked[p]]);
    for (std::size_t p = 0; p < m; ++p) upto_m += static_cast<std::size_t>(outcome[ranked[p]]);
    double selected;
    if (ties == TieHandling::kIndex || m == end) {
      selected = static_cast<double>(upto_m);
    } else {
      selected = static_cast<double>(before) + static_cast<double>(m - start) *
                                                   static_cast<double>(in_block) /
                                                   static_cast<double>(end - start);
    }
    return selected / static_cast<double>(m);
  };
  const auto treated = rank_arm(1), control = rank_arm(0);
  double total = 0.0;
  for (std::size_t k = 1; k <= n_points; ++k) {
    const double phi = static_cast<double>(k) / static_cast<double>(n_points);
    total += phi * (rate(treated, k) - rate(control, k));
  }
  return total / static_cast<double>(n_points);
}

struct MonteCarloLabel {
  double mean = 0.0;
  double standard_error = 0.0;
  double truth = 0.0;
  std::size_t kept = 0;
};

// Resamples treatment at rate u_t and outcomes from per-instance rates for
// one fixed bag; draws with a single arm are skipped.
inline MonteCarloLabel bag_label_monte_carlo(const std::vector<double>& rate_t,
                                             const std::vector<double>& rate_c, double u_t,
                                             std::size_t draws, std::uint64_t seed) {
  const std::size_t n = rate_t.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::size_t> bag(n);
  for (std::size_t i = 0; i < n; ++i) bag[i] = i;
  std::vector<int> t(n), y(n);
  MonteCarloLabel r;
  for (std::size_t i = 0; i < n; ++i) r.truth += rate_t[i] - rate_c[i];
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = u(rng) < u_t;
      y[i] = u(rng) < (t[i] ? rate_t[i] : rate_c[i]);
    }
    const auto label = bag_label(y, t, bag, u_t);
    if (!label) continue;
    sum += *label;
    sum_sq += *label * *label;
    ++r.kept;
  }
  const double k = static_cast<double>(r.kept);
  r.mean = sum / k;
  r.standard_error = std::sqrt((sum_sq - k * r.mean * r.mean) / (k - 1.0) / k);
  return r;
}

}  // namespace milup::testing
