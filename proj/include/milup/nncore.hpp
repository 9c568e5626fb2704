#pragma once

// Minimal dense feedforward network: parameters, forward/backward passes,
// Adam and binary cross-entropy. All arithmetic is double precision.

#include <cstdint>
#include <span>
#include <vector>

#include "milup/matrix.hpp"

namespace milup {

enum class Activation { kRelu, kLogistic, kIdentity };

// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] wherever they are
// produced or passed to a logarithm.
inline constexpr double kProbFloor = 1e-7;

double logistic(double z);
double clamp_probability(double p);

struct Layer {
  Matrix weight;  // in x out
  std::vector<double> bias;
  Activation activation = Activation::kRelu;

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
  bool operator==(const Layer&) const = default;
};

struct NetworkParams {
  std::vector<Layer> layers;

  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().in(); }
  std::size_t output_size() const { return layers.empty() ? 0 : layers.back().out(); }
  std::size_t parameter_count() const;
  bool operator==(const NetworkParams&) const = default;
};

// Zero-valued parameters with the same shapes and activations as `like`.
NetworkParams zeros_like(const NetworkParams& like);
// a += b, shapes must match.
void accumulate(NetworkParams& a, const NetworkParams& b);

// Rectifier hidden layers with He-normal weights and zero biases. The last
// layer uses `output_activation`. Throws ConfigError when fewer than two sizes
// are given or a size is zero.
NetworkParams init_network(std::span<const std::size_t> layer_sizes, std::uint64_t seed,
                           Activation output_activation = Activation::kLogistic);

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // per-layer pre-activation
  std::vector<Matrix> post;  // per-layer activation output
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

ForwardResult forward(const NetworkParams& params, const Matrix& x);

struct BackwardResult {
  NetworkParams grads;  // shaped like the params
  Matrix input_grad;    // dL/dx
};

// `output_grad` is dL/d(output) where output is the last layer's activation.
BackwardResult backward(const NetworkParams& params, const ForwardCache& cache,
                        const Matrix& output_grad);

struct AdamState {
  NetworkParams first_moment;
  NetworkParams second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
};

AdamState make_adam_state(const NetworkParams& params, double learning_rate,
                          double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

// Bias-corrected Adam update in place; increments state.step.
void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state);

struct BceResult {
  double loss = 0.0;
  std::vector<double> logit_grad;  // d loss / d pre-logistic value
  std::size_t selected = 0;
  bool empty() const { return selected == 0; }
};

// Mean negative log-likelihood over entries with mask != 0. The gradient is
// taken with respect to the pre-logistic value, (p - y) / selected, and is zero
// on masked-out entries. An empty mask yields zero loss and gradient.
BceResult bce_loss(std::span<const double> probabilities, std::span<const int> labels,
                   std::span<const int> mask);

}  // namespace milup
