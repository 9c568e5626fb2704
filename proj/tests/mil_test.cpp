#include "milup/mil.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "milup/error.hpp"
#include "test_support.hpp"

namespace milup {
namespace {

using testing::combined_fd_check;
using testing::jitter_biases;
using testing::random_batch;

using Bags = std::vector<std::vector<std::size_t>>;

std::vector<std::size_t> iota_bag(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

TEST(BagModeTest, Parses) {
  EXPECT_EQ(parse_bag_mode("clustered"), BagMode::kClustered);
  EXPECT_EQ(parse_bag_mode("RANDOM"), BagMode::kRandom);
  EXPECT_THROW(parse_bag_mode("kmeans"), ConfigError);
}

TEST(ClusterBagsTest, SortedPairsExample) {
  const std::vector<double> pred{0.9, 0.1, 0.5, 0.3, 0.8, 0.2};
  const BagPartition p = cluster_bags(pred, 2, BagMode::kClustered);
  EXPECT_EQ(p.bags, (Bags{{1, 5}, {3, 2}, {4, 0}}));
}

TEST(ClusterBagsTest, BagSizeEqualToBatchGivesOneBag) {
  const std::vector<double> pred{0.3, -0.1, 0.2, 0.0};
  const BagPartition p = cluster_bags(pred, 4, BagMode::kClustered);
  ASSERT_EQ(p.bags.size(), 1u);
  std::set<std::size_t> members(p.bags[0].begin(), p.bags[0].end());
  EXPECT_EQ(members, (std::set<std::size_t>{0, 1, 2, 3}));
}

TEST(ClusterBagsTest, TiesKeepIndexOrder) {
  const std::vector<double> pred(9, 0.25);
  const BagPartition p = cluster_bags(pred, 3, BagMode::kClustered);
  EXPECT_EQ(p.bags, (Bags{{0, 1, 2}, {3, 4, 5}, {6, 7, 8}}));
}

TEST(ClusterBagsTest, RemainderDroppedAndOversizeWarns) {
  const std::vector<double> pred{0.5, 0.4, 0.3, 0.2, 0.1};
  EXPECT_EQ(cluster_bags(pred, 2, BagMode::kClustered).bags.size(), 2u);
  testing::WarningLog warnings;
  EXPECT_TRUE(cluster_bags(pred, 6, BagMode::kClustered).bags.empty());
  EXPECT_EQ(warnings.messages().size(), 1u);
  EXPECT_THROW(cluster_bags(pred, 1, BagMode::kClustered), ConfigError);
}

TEST(ClusterBagsTest, RandomModeSeededShuffle) {
  std::vector<double> pred(64);
  std::iota(pred.begin(), pred.end(), 0.0);
  const BagPartition a = cluster_bags(pred, 8, BagMode::kRandom, 3);
  const BagPartition b = cluster_bags(pred, 8, BagMode::kRandom, 3);
  const BagPartition c = cluster_bags(pred, 8, BagMode::kRandom, 4);
  EXPECT_EQ(a.bags, b.bags);
  EXPECT_NE(a.bags, c.bags);
  EXPECT_NE(a.bags, cluster_bags(pred, 8, BagMode::kClustered).bags);
}

TEST(ClusterBagsTest, PartitionLegalityAndMonotonicity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 200, bag = 2 + rng() % 20;
    std::vector<double> pred(n);
    // Coarse values force many ties.
    for (double& v : pred) v = static_cast<double>(rng() % 7) / 10.0 - 0.3;
    for (BagMode mode : {BagMode::kClustered, BagMode::kRandom}) {
      testing::WarningLog quiet;
      const BagPartition p = cluster_bags(pred, bag, mode, trial);
      EXPECT_EQ(p.bags.size(), n / bag);
      std::set<std::size_t> seen;
      for (const auto& b : p.bags) {
        EXPECT_EQ(b.size(), bag);
        for (std::size_t i : b) {
          EXPECT_LT(i, n);
          EXPECT_TRUE(seen.insert(i).second);
        }
      }
      if (mode != BagMode::kClustered) continue;
      for (std::size_t k = 0; k + 1 < p.bags.size(); ++k) {
        double hi = -1e9, lo = 1e9;
        for (std::size_t i : p.bags[k]) hi = std::max(hi, pred[i]);
        for (std::size_t i : p.bags[k + 1]) lo = std::min(lo, pred[i]);
        EXPECT_LE(hi, lo);
      }
    }
  }
}

TEST(BagLabelTest, WorkedExamples) {
  // Rows: treated y=1, treated y=0, control y=0, control y=0.
  const std::vector<int> y1{1, 0, 0, 0}, t1{1, 1, 0, 0};
  EXPECT_NEAR(*bag_label(y1, t1, iota_bag(4), 0.5), 2.0, 1e-12);

  const std::vector<int> y2{1, 1, 0, 1}, t2{1, 1, 1, 0};
  EXPECT_NEAR(*bag_label(y2, t2, iota_bag(4), 0.75), -4.0 / 3.0, 1e-12);

  const std::vector<int> zeros(4, 0);
  EXPECT_EQ(*bag_label(zeros, t1, iota_bag(4), 0.5), 0.0);
}

TEST(BagLabelTest, SingleArmBagUnusable) {
  const std::vector<int> y{1, 0, 1}, t{1, 1, 1};
  EXPECT_FALSE(bag_label(y, t, iota_bag(3), 0.5).has_value());
  const std::vector<double> p{0.2, 0.3, 0.4};
  EXPECT_FALSE(bag_prediction(p, p, t, iota_bag(3), 0.5).has_value());
  const BagStats s = bag_stats(y, t, p, p, iota_bag(3), 0.5);
  EXPECT_FALSE(s.usable);
  EXPECT_EQ(s.n_treated, 3u);
  EXPECT_EQ(s.n_control, 0u);
}

TEST(BagPredictionTest, WorkedExamples) {
  const std::vector<int> t{1, 1, 0, 0};
  const std::vector<double> p_t{0.6, 0.4, 0.9, 0.9}, p_c{0.1, 0.1, 0.5, 0.3};
  EXPECT_NEAR(*bag_prediction(p_t, p_c, t, iota_bag(4), 0.5), 0.4, 1e-12);

  const std::vector<double> half(4, 0.5);
  EXPECT_EQ(*bag_prediction(half, half, t, iota_bag(4), 0.5), 0.0);

  const std::vector<int> y{1, 0, 1, 0};
  const std::vector<double> exact_t{1.0, 0.0, 0.7, 0.7}, exact_c{0.2, 0.2, 1.0, 0.0};
  EXPECT_EQ(*bag_prediction(exact_t, exact_c, t, iota_bag(4), 0.5),
            *bag_label(y, t, iota_bag(4), 0.5));
}

TEST(MilLossTest, WorkedExamples) {
  BagStats a{2.0, 1.5, 1, 1, true};
  EXPECT_DOUBLE_EQ(mil_loss(std::vector<BagStats>{a}).value, 0.25);

  BagStats b{0.3, 0.2, 2, 2, true}, c{-0.1, 0.1, 2, 2, true};
  const MilLoss two = mil_loss(std::vector<BagStats>{b, c});
  EXPECT_NEAR(two.value, 0.05, 1e-15);
  EXPECT_EQ(two.usable_bags, 2u);
  EXPECT_NEAR(two.residuals[0], 0.1, 1e-15);
  EXPECT_NEAR(two.residuals[1], -0.2, 1e-15);

  BagStats same{0.7, 0.7, 1, 3, true};
  EXPECT_EQ(mil_loss(std::vector<BagStats>{same, same}).value, 0.0);
}

TEST(MilLossTest, UnusableBagsExcluded) {
  BagStats usable{1.0, 0.5, 1, 1, true}, single{9.0, 0.0, 2, 0, false};
  const MilLoss l = mil_loss(std::vector<BagStats>{usable, single});
  EXPECT_EQ(l.value, 0.25);
  EXPECT_EQ(l.usable_bags, 1u);
  EXPECT_EQ(l.residuals[1], 0.0);
  EXPECT_EQ(mil_loss(std::vector<BagStats>{single}).usable_bags, 0u);
}

void expect_same_grads(const ModelGrads& a, const ModelGrads& b) {
  ASSERT_EQ(a.networks.size(), b.networks.size());
  for (std::size_t n = 0; n < a.networks.size(); ++n) EXPECT_EQ(a.networks[n], b.networks[n]);
}

TEST(CombinedLossTest, AlphaZeroIsBitwiseBase) {
  std::mt19937_64 rng(21);
  const std::vector<std::size_t> hidden{8, 4};
  for (ModelKind k : {ModelKind::kTM, ModelKind::kTarnet, ModelKind::kDdr, ModelKind::kSdr}) {
    const UpliftModel m = build_model(k, 3, hidden, rng());
    const Batch b = random_batch(32, 3, rng);
    MilSettings s;
    s.alpha = 0.0;
    s.bag_size = 8;
    const CombinedResult combined = combined_loss_and_grads(m, b, s);
    const BaseLossResult base = base_loss_and_grads(m, b.x, b.treatment, b.outcome);
    EXPECT_EQ(combined.loss.l, base.loss);
    expect_same_grads(combined.grads, base.grads);
  }
}

TEST(CombinedLossTest, TotalIsWeightedSum) {
  std::mt19937_64 rng(22);
  const std::vector<std::size_t> hidden{8};
  const UpliftModel m = build_model(ModelKind::kTarnet, 3, hidden, 2);
  const Batch b = random_batch(32, 3, rng);
  for (double alpha : {0.0, 1e-3, 0.7}) {
    for (double weight : {1.0, 0.0, 0.5}) {
      MilSettings s;
      s.alpha = alpha;
      s.base_weight = weight;
      s.bag_size = 4;
      const LossBreakdown l = combined_loss_and_grads(m, b, s).loss;
      EXPECT_EQ(l.l, weight * l.l_base + alpha * l.l_mil);
    }
  }
}

TEST(CombinedLossTest, FiniteDifferencesWithFrozenBags) {
  std::mt19937_64 rng(23);
  const std::vector<std::size_t> hidden{6, 5};
  for (ModelKind k : {ModelKind::kTM, ModelKind::kTarnet, ModelKind::kDdr, ModelKind::kSdr}) {
    for (BagMode mode : {BagMode::kClustered, BagMode::kRandom}) {
      UpliftModel m = build_model(k, 3, hidden, rng());
      jitter_biases(m, rng);
      const Batch b = random_batch(16, 3, rng);
      MilSettings s;
      s.alpha = 0.5;
      s.bag_size = 4;
      s.mode = mode;
      s.shuffle_seed = 9;
      const BagPartition partition = combined_loss_and_grads(m, b, s).partition;
      ASSERT_EQ(partition.bags.size(), 4u);
      const auto report = combined_fd_check(m, b, s, partition);
      EXPECT_LT(report.max_rel_error, 1e-4) << to_string(k) << " " << to_string(mode);
    }
  }
}

TEST(CombinedLossTest, MilGradientSignOnLogits) {
  // One treated and one control row in one bag; L_mil gradient w.r.t. the
  // treated probability is -2 r / u_t.
  const std::vector<std::size_t> hidden{3};
  UpliftModel m = build_model(ModelKind::kTM, 1, hidden, 0);
  for (double& w : m.networks[0].layers.back().weight.values()) w = 0.0;
  Batch b;
  b.x = Matrix(2, 1, {0.0, 1.0});
  b.treatment = {1, 0};
  b.outcome = {1, 0};
  b.u_t = 0.5;
  MilSettings s;
  s.alpha = 1.0;
  s.bag_size = 2;
  MilSettings base = s;
  base.alpha = 0.0;
  const auto with = combined_loss_and_grads(m, b, s);
  const auto without = combined_loss_and_grads(m, b, base);
  // y_bag = 2, h_bag = 0.5/0.5 - 0.5/0.5 = 0, r = 2.
  EXPECT_NEAR(with.loss.l_mil, 4.0, 1e-12);
  const double g_treated_logit = -2.0 * 2.0 / 0.5 * 0.25;
  const double g_control_logit = 2.0 * 2.0 / 0.5 * 0.25;
  // Output bias gradient: column 0 is p_c, column 1 is p_t.
  const auto& gb = with.grads.networks[0].layers.back().bias;
  const auto& gb0 = without.grads.networks[0].layers.back().bias;
  EXPECT_NEAR(gb[1] - gb0[1], g_treated_logit, 1e-12);
  EXPECT_NEAR(gb[0] - gb0[0], g_control_logit, 1e-12);
}

TEST(VarianceIdentityTest, Examples) {
  BagPartition one;
  one.bags = {{0, 1}};
  const std::vector<double> y{1.0, 0.0};
  auto [l0, r0] = variance_identity_check(y, std::vector<double>{0.0, 0.0}, one);
  EXPECT_EQ(l0, 0.0);
  EXPECT_EQ(r0, 0.0);
  auto [l1, r1] = variance_identity_check(y, std::vector<double>{0.1, -0.1}, one);
  EXPECT_NEAR(l1, 0.0, 1e-12);
  EXPECT_NEAR(r1, 0.0, 1e-12);
  auto [l2, r2] = variance_identity_check(y, std::vector<double>{0.1, 0.2}, one);
  EXPECT_NEAR(l2, 0.09, 1e-12);
  EXPECT_NEAR(r2, 0.09, 1e-12);
}

TEST(VarianceIdentityTest, RandomCases) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::bernoulli_distribution coin(0.3);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 8 + rng() % 120, bag = 2 + rng() % 8;
    std::vector<double> y(n), e(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = coin(rng);
      e[i] = noise(rng);
      pred[i] = noise(rng);
    }
    testing::WarningLog quiet;
    const auto p = cluster_bags(pred, bag, BagMode::kClustered);
    const auto [lhs, rhs] = variance_identity_check(y, e, p);
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(BagLabelTest, MonteCarloUnbiased) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> base(0.05, 0.3), lift(0.0, 0.1);
  std::vector<double> rate_t(64), rate_c(64);
  for (std::size_t i = 0; i < 64; ++i) {
    rate_c[i] = base(rng);
    rate_t[i] = rate_c[i] + lift(rng);
  }
  for (double u_t : {0.5, 0.3}) {
    const auto mc = testing::bag_label_monte_carlo(rate_t, rate_c, u_t, 20000, 7);
    EXPECT_GE(mc.kept, 19990u);
    EXPECT_LE(std::abs(mc.mean - mc.truth), 3.0 * mc.standard_error)
        << "u_t=" << u_t << " mean=" << mc.mean << " truth=" << mc.truth;
  }
}

TEST(MakeBatchTest, CopiesRowsAndTreatedFraction) {
  SynthConfig cfg;
  cfg.n = 40;
  const Dataset ds = generate_synthetic(cfg);
  const std::vector<std::size_t> rows{3, 7, 11, 20};
  const Batch b = make_batch(ds, rows);
  EXPECT_EQ(b.x.rows(), 4u);
  std::size_t treated = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(b.treatment[i], ds.treatment[rows[i]]);
    EXPECT_EQ(b.outcome[i], ds.outcome[rows[i]]);
    EXPECT_EQ(b.x(i, 1), ds.features(rows[i], 1));
    treated += b.treatment[i];
  }
  EXPECT_EQ(b.u_t, treated / 4.0);
}

}  // namespace
}  // namespace milup
