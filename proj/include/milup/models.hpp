#pragma once

// Two-model uplift architectures. Every kind maps features to a pair of
// response probabilities (p_t, p_c) and predicts uplift as their difference.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "milup/data.hpp"
#include "milup/nncore.hpp"

namespace milup {

enum class ModelKind {
  kTM,      // one trunk, two logistic output nodes
  kTarnet,  // shared trunk, one hidden-layer head per arm
  kDdr,     // treatment net reads features plus the control prediction
  kSdr,     // shared logit plus a private logit per arm
};

std::string_view to_string(ModelKind kind);
// Case-insensitive; throws ConfigError for unknown names.
ModelKind parse_model_kind(std::string_view name);

struct UpliftModel {
  ModelKind kind = ModelKind::kTM;
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_sizes;
  std::uint64_t seed = 0;
  // Fitted on the training split; identity when empty.
  Standardizer input_transform;
  // TM: {net}. TARNET: {trunk, control head, treated head}.
  // DDR: {control net, treated net}. SDR: {trunk, shared, control, treated}.
  std::vector<NetworkParams> networks;

  bool operator==(const UpliftModel&) const = default;
};

UpliftModel build_model(ModelKind kind, std::size_t input_dim,
                        std::span<const std::size_t> hidden_sizes, std::uint64_t seed);

// Exchanges the treated and control branches so the predicted uplift changes
// sign. Not defined for DDR, whose arms are not symmetric.
void swap_arms(UpliftModel& model);

struct Prediction {
  std::vector<double> p_t;
  std::vector<double> p_c;
  std::vector<double> uplift;
};

// Everything backward_model needs from a forward pass.
struct ModelPass {
  std::vector<ForwardResult> nets;
  std::vector<double> logit_t, logit_c;
  std::vector<double> p_t, p_c;
  std::size_t rows() const { return p_t.size(); }
};

// `frozen_feed` (DDR only) replaces the control probability fed to the
// treated net; finite-difference checks use it to hold the stop-gradient
// input fixed.
ModelPass forward_model(const UpliftModel& model, const Matrix& x,
                        std::span<const double> frozen_feed = {});

// Chunked inference; uplift[i] = p_t[i] - p_c[i].
Prediction predict(const UpliftModel& model, const Matrix& x);

struct ModelGrads {
  std::vector<NetworkParams> networks;
};

void accumulate(ModelGrads& a, const ModelGrads& b);

// Backpropagates per-row gradients with respect to the treated and control
// logits. For DDR nothing flows from the treated net back into the control
// net.
ModelGrads backward_model(const UpliftModel& model, const ModelPass& pass,
                          std::span<const double> logit_grad_t,
                          std::span<const double> logit_grad_c);

// Factual-arm cross-entropy: BCE of p_t over treated rows plus BCE of p_c over
// control rows, each averaged over its own arm.
struct FactualLoss {
  double loss = 0.0;
  std::vector<double> logit_grad_t;
  std::vector<double> logit_grad_c;
  bool treated_empty = false;
  bool control_empty = false;
};

FactualLoss factual_bce(std::span<const double> p_t, std::span<const double> p_c,
                        std::span<const int> treatment, std::span<const int> outcome);

struct BaseLossResult {
  double loss = 0.0;
  ModelGrads grads;
  bool treated_empty = false;
  bool control_empty = false;
};

BaseLossResult base_loss_and_grads(const UpliftModel& model, const Matrix& x,
                                   std::span<const int> treatment, std::span<const int> outcome);

struct ModelOptimizer {
  std::vector<AdamState> states;
};

ModelOptimizer make_optimizer(const UpliftModel& model, double learning_rate);
void adam_step(UpliftModel& model, const ModelGrads& grads, ModelOptimizer& optimizer);

// Text checkpoint: a versioned manifest (kind, dims, seed, transform)
// followed by every matrix at 17 significant digits.
void save_checkpoint(const UpliftModel& model, const std::filesystem::path& path);
UpliftModel load_checkpoint(const std::filesystem::path& path);

}  // namespace milup
