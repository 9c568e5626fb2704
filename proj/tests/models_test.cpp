#include "milup/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "milup/error.hpp"
#include "milup/mil.hpp"
#include "test_support.hpp"

namespace milup {
namespace {

using testing::combined_fd_check;
using testing::gaussian_matrix;
using testing::jitter_biases;
using testing::random_batch;

constexpr ModelKind kAllKinds[] = {ModelKind::kTM, ModelKind::kTarnet, ModelKind::kDdr,
                                   ModelKind::kSdr};

void zero_output_layers(UpliftModel& m) {
  for (auto& net : m.networks) {
    for (double& w : net.layers.back().weight.values()) w = 0.0;
    for (double& b : net.layers.back().bias) b = 0.0;
  }
}

bool all_zero(const NetworkParams& p) {
  for (const auto& l : p.layers) {
    for (double v : l.weight.values())
      if (v != 0.0) return false;
    for (double v : l.bias)
      if (v != 0.0) return false;
  }
  return true;
}

TEST(ModelKindTest, ParsesNames) {
  EXPECT_EQ(parse_model_kind("tarnet"), ModelKind::kTarnet);
  EXPECT_EQ(parse_model_kind("TM"), ModelKind::kTM);
  EXPECT_EQ(parse_model_kind("Sdr"), ModelKind::kSdr);
  EXPECT_EQ(parse_model_kind(to_string(ModelKind::kDdr)), ModelKind::kDdr);
  EXPECT_THROW(parse_model_kind("cfr"), ConfigError);
}

TEST(BuildModelTest, TmHasTwoOutputNodes) {
  const std::vector<std::size_t> hidden{1024, 512, 256};
  const UpliftModel m = build_model(ModelKind::kTM, 12, hidden, 0);
  ASSERT_EQ(m.networks.size(), 1u);
  const auto& layers = m.networks[0].layers;
  ASSERT_EQ(layers.size(), 4u);
  EXPECT_EQ(layers.front().in(), 12u);
  EXPECT_EQ(layers.back().out(), 2u);
  EXPECT_EQ(layers.back().in(), 256u);
}

TEST(BuildModelTest, DdrTreatedInputIsOneWider) {
  const std::vector<std::size_t> hidden{8, 4};
  const UpliftModel m = build_model(ModelKind::kDdr, 5, hidden, 0);
  ASSERT_EQ(m.networks.size(), 2u);
  EXPECT_EQ(m.networks[0].input_size(), 5u);
  EXPECT_EQ(m.networks[1].input_size(), 6u);
}

TEST(BuildModelTest, TarnetHeadsUseLastHiddenWidth) {
  const std::vector<std::size_t> hidden{8, 4};
  const UpliftModel m = build_model(ModelKind::kTarnet, 3, hidden, 0);
  ASSERT_EQ(m.networks.size(), 3u);
  for (std::size_t h : {1u, 2u}) {
    ASSERT_EQ(m.networks[h].layers.size(), 2u);
    EXPECT_EQ(m.networks[h].layers[0].in(), 4u);
    EXPECT_EQ(m.networks[h].layers[0].out(), 4u);
    EXPECT_EQ(m.networks[h].layers[1].out(), 1u);
  }
}

TEST(BuildModelTest, DeterministicPerSeed) {
  const std::vector<std::size_t> hidden{6, 3};
  for (ModelKind k : kAllKinds) {
    EXPECT_EQ(build_model(k, 4, hidden, 17), build_model(k, 4, hidden, 17));
    EXPECT_NE(build_model(k, 4, hidden, 17), build_model(k, 4, hidden, 18));
  }
}

TEST(BuildModelTest, RejectsZeroInput) {
  const std::vector<std::size_t> hidden{4};
  EXPECT_THROW(build_model(ModelKind::kTM, 0, hidden, 0), ConfigError);
}

TEST(PredictTest, ZeroOutputModelGivesHalf) {
  std::mt19937_64 rng(1);
  const std::vector<std::size_t> hidden{5, 3};
  for (ModelKind k : kAllKinds) {
    UpliftModel m = build_model(k, 3, hidden, 2);
    zero_output_layers(m);
    const Prediction p = predict(m, gaussian_matrix(7, 3, rng));
    ASSERT_EQ(p.p_t.size(), 7u);
    ASSERT_EQ(p.p_c.size(), 7u);
    ASSERT_EQ(p.uplift.size(), 7u);
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_EQ(p.p_t[i], 0.5) << to_string(k);
      EXPECT_EQ(p.p_c[i], 0.5);
      EXPECT_EQ(p.uplift[i], 0.0);
    }
  }
}

TEST(PredictTest, UpliftIsExactDifferenceAndInRange) {
  std::mt19937_64 rng(3);
  const std::vector<std::size_t> hidden{16, 8};
  for (ModelKind k : kAllKinds) {
    const UpliftModel m = build_model(k, 4, hidden, 5);
    // Crosses the inference chunk boundary.
    const Prediction p = predict(m, gaussian_matrix(5000, 4, rng));
    for (std::size_t i = 0; i < p.uplift.size(); ++i) {
      EXPECT_EQ(p.uplift[i], p.p_t[i] - p.p_c[i]);
      ASSERT_GT(p.p_t[i], 0.0);
      ASSERT_LT(p.p_t[i], 1.0);
      ASSERT_GT(p.p_c[i], 0.0);
      ASSERT_LT(p.p_c[i], 1.0);
    }
  }
}

TEST(PredictTest, ChunkedMatchesSinglePass) {
  std::mt19937_64 rng(4);
  const std::vector<std::size_t> hidden{8};
  const UpliftModel m = build_model(ModelKind::kTarnet, 3, hidden, 5);
  const Matrix x = gaussian_matrix(4100, 3, rng);
  const Prediction p = predict(m, x);
  const ModelPass pass = forward_model(m, x);
  EXPECT_EQ(p.p_t, pass.p_t);
  EXPECT_EQ(p.p_c, pass.p_c);
}

TEST(PredictTest, ShapeMismatchThrows) {
  const std::vector<std::size_t> hidden{4};
  const UpliftModel m = build_model(ModelKind::kTM, 3, hidden, 0);
  EXPECT_THROW(predict(m, Matrix(2, 4)), ShapeError);
}

TEST(BaseLossTest, ClampBoundaryExample) {
  const std::vector<double> p_t{1.0 - 1e-7, 0.3}, p_c{0.9, 1e-7};
  const std::vector<int> t{1, 0}, y{1, 0};
  const FactualLoss l = factual_bce(p_t, p_c, t, y);
  EXPECT_NEAR(l.loss, 2e-7, 1e-13);
  EXPECT_NEAR(l.loss, -2.0 * std::log1p(-1e-7), 1e-15);
}

TEST(BaseLossTest, HalfProbabilitiesGiveTwoLnTwo) {
  const std::vector<double> half(4, 0.5);
  const std::vector<int> t{1, 0, 1, 0}, y{1, 1, 0, 0};
  EXPECT_NEAR(factual_bce(half, half, t, y).loss, 2.0 * std::log(2.0), 1e-15);
}

TEST(BaseLossTest, ArmsAveragedSeparatelyAndSummed) {
  const std::vector<double> p_t{0.8, 0.6, 0.5}, p_c{0.1, 0.2, 0.4};
  const std::vector<int> t{1, 1, 0}, y{1, 0, 1};
  const double treated = (-std::log(0.8) - std::log(0.4)) / 2.0;
  const double control = -std::log(0.4);
  EXPECT_NEAR(factual_bce(p_t, p_c, t, y).loss, treated + control, 1e-14);
}

TEST(BaseLossTest, SingleArmBatchFlagged) {
  const std::vector<double> p{0.3, 0.6};
  const std::vector<int> t{1, 1}, y{0, 1};
  const FactualLoss l = factual_bce(p, p, t, y);
  EXPECT_TRUE(l.control_empty);
  EXPECT_FALSE(l.treated_empty);
  for (double g : l.logit_grad_c) EXPECT_EQ(g, 0.0);
}

TEST(BaseLossTest, FactualMasking) {
  std::mt19937_64 rng(8);
  const Batch b = random_batch(12, 3, rng);
  std::vector<double> p_t(12), p_c(12);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (std::size_t i = 0; i < 12; ++i) p_t[i] = u(rng), p_c[i] = u(rng);
  const FactualLoss l = factual_bce(p_t, p_c, b.treatment, b.outcome);
  for (std::size_t i = 0; i < 12; ++i) {
    if (b.treatment[i]) {
      EXPECT_EQ(l.logit_grad_c[i], 0.0);
    } else {
      EXPECT_EQ(l.logit_grad_t[i], 0.0);
    }
  }
  // Perturbing the counterfactual prediction leaves the loss unchanged.
  for (std::size_t i = 0; i < 12; ++i) {
    auto pt2 = p_t, pc2 = p_c;
    (b.treatment[i] ? pc2 : pt2)[i] += 0.03;
    EXPECT_EQ(factual_bce(pt2, pc2, b.treatment, b.outcome).loss, l.loss);
  }
}

TEST(BaseLossTest, TarnetHeadsOnlySeeOwnArm) {
  std::mt19937_64 rng(9);
  const std::vector<std::size_t> hidden{6, 4};
  const UpliftModel m = build_model(ModelKind::kTarnet, 3, hidden, 1);
  const Matrix x = gaussian_matrix(10, 3, rng);
  const std::vector<int> treated(10, 1), y{1, 0, 1, 0, 1, 0, 1, 0, 1, 1};
  const BaseLossResult r = base_loss_and_grads(m, x, treated, y);
  EXPECT_TRUE(all_zero(r.grads.networks[1]));   // control head
  EXPECT_FALSE(all_zero(r.grads.networks[2]));  // treated head
}

TEST(BaseLossTest, DdrTreatedRowsDoNotReachControlNet) {
  std::mt19937_64 rng(10);
  const std::vector<std::size_t> hidden{6, 4};
  const UpliftModel m = build_model(ModelKind::kDdr, 3, hidden, 1);
  const Matrix x = gaussian_matrix(10, 3, rng);
  const std::vector<int> treated(10, 1), y{1, 0, 1, 0, 1, 0, 1, 0, 1, 1};
  const BaseLossResult r = base_loss_and_grads(m, x, treated, y);
  EXPECT_TRUE(all_zero(r.grads.networks[0]));
  EXPECT_FALSE(all_zero(r.grads.networks[1]));
}

TEST(BaseLossTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const std::vector<std::size_t> hidden{5, 4};
  MilSettings base_only;
  base_only.alpha = 0.0;
  for (ModelKind k : kAllKinds) {
    UpliftModel m = build_model(k, 3, hidden, rng());
    jitter_biases(m, rng);
    const Batch b = random_batch(10, 3, rng);
    const auto report = combined_fd_check(m, b, base_only, BagPartition{});
    EXPECT_LT(report.max_rel_error, 1e-4) << to_string(k);
    EXPECT_GT(report.checked, 0u);

    // The partition-free path agrees with base_loss_and_grads.
    const BaseLossResult direct = base_loss_and_grads(m, b.x, b.treatment, b.outcome);
    const CombinedResult via = combined_loss_for_partition(m, b, base_only, BagPartition{});
    EXPECT_EQ(direct.loss, via.loss.l_base);
  }
}

TEST(SwapArmsTest, NegatesUplift) {
  std::mt19937_64 rng(12);
  const std::vector<std::size_t> hidden{6, 4};
  const Matrix x = gaussian_matrix(9, 3, rng);
  for (ModelKind k : {ModelKind::kTM, ModelKind::kTarnet, ModelKind::kSdr}) {
    UpliftModel m = build_model(k, 3, hidden, 4);
    const Prediction before = predict(m, x);
    swap_arms(m);
    const Prediction after = predict(m, x);
    for (std::size_t i = 0; i < 9; ++i) {
      EXPECT_EQ(after.uplift[i], -before.uplift[i]) << to_string(k);
      EXPECT_EQ(after.p_t[i], before.p_c[i]);
    }
  }
  UpliftModel ddr = build_model(ModelKind::kDdr, 3, hidden, 4);
  EXPECT_THROW(swap_arms(ddr), ConfigError);
}

TEST(CheckpointTest, RoundTripIsExact) {
  std::mt19937_64 rng(13);
  const std::vector<std::size_t> hidden{7, 5};
  const auto dir = std::filesystem::temp_directory_path() / "milup_models_ckpt";
  std::filesystem::create_directories(dir);
  for (ModelKind k : kAllKinds) {
    UpliftModel m = build_model(k, 4, hidden, rng());
    m.input_transform = Standardizer::fit(gaussian_matrix(20, 4, rng));
    const auto path = dir / (std::string(to_string(k)) + ".ckpt");
    save_checkpoint(m, path);
    EXPECT_EQ(load_checkpoint(path), m) << to_string(k);
  }
  std::filesystem::remove_all(dir);
}

TEST(CheckpointTest, CorruptFileRejected) {
  const auto path = std::filesystem::temp_directory_path() / "milup_bad.ckpt";
  std::ofstream(path) << "not a checkpoint\n";
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace milup
