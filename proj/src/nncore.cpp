#include "milup/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "milup/error.hpp"
#include "milup/kernels.hpp"

namespace milup {

double logistic(double z) {
  double p;
  if (z >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    p = e / (1.0 + e);
  }
  return clamp_probability(p);
}

double clamp_probability(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

NetworkParams zeros_like(const NetworkParams& like) {
  NetworkParams out;
  out.layers.reserve(like.layers.size());
  for (const auto& l : like.layers) {
    out.layers.push_back(
        Layer{Matrix(l.in(), l.out()), std::vector<double>(l.out(), 0.0), l.activation});
  }
  return out;
}

void accumulate(NetworkParams& a, const NetworkParams& b) {
  if (a.layers.size() != b.layers.size()) throw ShapeError("accumulate: layer count mismatch");
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    auto& la = a.layers[k];
    const auto& lb = b.layers[k];
    if (la.weight.size() != lb.weight.size() || la.bias.size() != lb.bias.size()) {
      throw ShapeError("accumulate: layer " + std::to_string(k) + " shape mismatch");
    }
    auto wa = la.weight.values();
    auto wb = lb.weight.values();
    for (std::size_t i = 0; i < wa.size(); ++i) wa[i] += wb[i];
    for (std::size_t i = 0; i < la.bias.size(); ++i) la.bias[i] += lb.bias[i];
  }
}

NetworkParams init_network(std::span<const std::size_t> layer_sizes, std::uint64_t seed,
                           Activation output_activation) {
  if (layer_sizes.size() < 2) {
    throw ConfigError("init_network: need at least an input and an output size");
  }
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw ConfigError("init_network: layer sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  NetworkParams params;
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    const std::size_t fan_in = layer_sizes[k], fan_out = layer_sizes[k + 1];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Layer layer{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0),
                k + 2 == layer_sizes.size() ? output_activation : Activation::kRelu};
    for (double& w : layer.weight.values()) w = dist(rng);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

ForwardResult forward(const NetworkParams& params, const Matrix& x) {
  if (params.layers.empty()) throw ShapeError("forward: network has no layers");
  if (x.cols() != params.input_size()) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(params.input_size()));
  }
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.input = x;
  cache.pre.resize(params.layers.size());
  cache.post.resize(params.layers.size());
  const Matrix* current = &cache.input;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const Layer& layer = params.layers[k];
    kernels::affine(*current, layer.weight, layer.bias, cache.pre[k]);
    Matrix& post = cache.post[k];
    post = cache.pre[k];
    switch (layer.activation) {
      case Activation::kRelu:
        for (double& v : post.values()) v = v > 0.0 ? v : 0.0;
        break;
      case Activation::kLogistic:
        for (double& v : post.values()) v = logistic(v);
        break;
      case Activation::kIdentity:
        break;
    }
    current = &post;
  }
  result.output = cache.post.back();
  return result;
}

BackwardResult backward(const NetworkParams& params, const ForwardCache& cache,
                        const Matrix& output_grad) {
  const std::size_t depth = params.layers.size();
  if (cache.pre.size() != depth || cache.post.size() != depth) {
    throw ShapeError("backward: cache does not match network depth");
  }
  for (std::size_t k = 0; k < depth; ++k) {
    if (cache.pre[k].cols() != params.layers[k].out() ||
        cache.pre[k].rows() != cache.input.rows()) {
      throw ShapeError("backward: cache layer " + std::to_string(k) + " shape mismatch");
    }
  }
  if (cache.input.cols() != params.input_size()) throw ShapeError("backward: cache input width");
  if (output_grad.rows() != cache.input.rows() || output_grad.cols() != params.output_size()) {
    throw ShapeError("backward: output gradient shape mismatch");
  }

  BackwardResult result;
  result.grads = zeros_like(params);
  Matrix delta = output_grad;
  for (std::size_t k = depth; k-- > 0;) {
    const Layer& layer = params.layers[k];
    auto d = delta.values();
    switch (layer.activation) {
      case Activation::kRelu: {
        auto z = cache.pre[k].values();
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (!(z[i] > 0.0)) d[i] = 0.0;
        }
        break;
      }
      case Activation::kLogistic: {
        auto a = cache.post[k].values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= a[i] * (1.0 - a[i]);
        break;
      }
      case Activation::kIdentity:
        break;
    }
    const Matrix& prev = k == 0 ? cache.input : cache.post[k - 1];
    Layer& g = result.grads.layers[k];
    kernels::matmul_at_b(prev, delta, g.weight);
    kernels::column_sums(delta, g.bias);
    Matrix next;
    kernels::matmul_a_bt(delta, layer.weight, next);
    delta = std::move(next);
  }
  result.input_grad = std::move(delta);
  return result;
}

AdamState make_adam_state(const NetworkParams& params, double learning_rate, double beta1,
                          double beta2, double epsilon) {
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in (0, 1)");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
  AdamState s;
  s.first_moment = zeros_like(params);
  s.second_moment = zeros_like(params);
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  s.learning_rate = learning_rate;
  return s;
}

namespace {

void adam_update(std::span<double> p, std::span<const double> g, std::span<double> m,
                 std::span<double> v, const AdamState& s, double c1, double c2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    p[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

}  // namespace

void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state) {
  const std::size_t depth = params.layers.size();
  if (grads.layers.size() != depth || state.first_moment.layers.size() != depth ||
      state.second_moment.layers.size() != depth) {
    throw ShapeError("adam_step: layer count mismatch");
  }
  for (std::size_t k = 0; k < depth; ++k) {
    const auto& l = params.layers[k];
    for (const NetworkParams* other :
         {&grads, static_cast<const NetworkParams*>(&state.first_moment), static_cast<const NetworkParams*>(&state.second_moment)}) {
      if (other->layers[k].weight.rows() != l.in() || other->layers[k].weight.cols() != l.out() ||
          other->layers[k].bias.size() != l.out()) {
        throw ShapeError("adam_step: layer " + std::to_string(k) + " shape mismatch");
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < depth; ++k) {
    auto& l = params.layers[k];
    auto& m = state.first_moment.layers[k];
    auto& v = state.second_moment.layers[k];
    const auto& g = grads.layers[k];
    adam_update(l.weight.values(), g.weight.values(), m.weight.values(), v.weight.values(), state,
                c1, c2);
    adam_update(l.bias, g.bias, m.bias, v.bias, state, c1, c2);
  }
}

BceResult bce_loss(std::span<const double> probabilities, std::span<const int> labels,
                   std::span<const int> mask) {
  if (probabilities.size() != labels.size() || labels.size() != mask.size()) {
    throw ShapeError("bce_loss: length mismatch");
  }
  BceResult r;
  r.logit_grad.assign(probabilities.size(), 0.0);
  for (int m : mask) r.selected += m != 0 ? 1 : 0;
  if (r.selected == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.selected);
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (mask[i] == 0) continue;
    const double p = clamp_probability(probabilities[i]);
    const double y = labels[i];
    total -= y != 0.0 ? std::log(p) : std::log1p(-p);
    r.logit_grad[i] = (probabilities[i] - y) * inv;
  }
  r.loss = total * inv;
  return r;
}

}  // namespace milup
