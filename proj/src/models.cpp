#include "milup/models.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "milup/error.hpp"

namespace milup {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTM: return "TM";
    case ModelKind::kTarnet: return "TARNET";
    case ModelKind::kDdr: return "DDR";
    case ModelKind::kSdr: return "SDR";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "TM") return ModelKind::kTM;
  if (upper == "TARNET") return ModelKind::kTarnet;
  if (upper == "DDR") return ModelKind::kDdr;
  if (upper == "SDR") return ModelKind::kSdr;
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected tm, tarnet, ddr, sdr)");
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> chain(std::size_t in, std::span<const std::size_t> hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  if (out > 0) sizes.push_back(out);
  return sizes;
}

std::vector<double> column(const Matrix& m, std::size_t c) {
  std::vector<double> v(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) v[i] = m(i, c);
  return v;
}

std::vector<double> to_probabilities(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = logistic(logits[i]);
  return p;
}

}  // namespace

UpliftModel build_model(ModelKind kind, std::size_t input_dim,
                        std::span<const std::size_t> hidden_sizes, std::uint64_t seed) {
  if (input_dim == 0) throw ConfigError("build_model: input dimension must be at least 1");
  if ((kind == ModelKind::kTarnet || kind == ModelKind::kSdr) && hidden_sizes.empty()) {
    throw ConfigError("build_model: " + std::string(to_string(kind)) + " needs a hidden trunk");
  }
  UpliftModel m;
  m.kind = kind;
  m.input_dim = input_dim;
  m.hidden_sizes.assign(hidden_sizes.begin(), hidden_sizes.end());
  m.seed = seed;
  const std::size_t width = hidden_sizes.empty() ? 0 : hidden_sizes.back();
  auto net = [&](std::vector<std::size_t> sizes, Activation out_act) {
    const std::uint64_t s = derive_seed(seed, m.networks.size());
    m.networks.push_back(init_network(sizes, s, out_act));
  };
  switch (kind) {
    case ModelKind::kTM:
      net(chain(input_dim, hidden_sizes, 2), Activation::kIdentity);
      break;
    case ModelKind::kTarnet: {
      net(chain(input_dim, hidden_sizes, 0), Activation::kRelu);
      const std::vector<std::size_t> head{width, width, 1};
      net(head, Activation::kIdentity);
      net(head, Activation::kIdentity);
      break;
    }
    case ModelKind::kDdr:
      net(chain(input_dim, hidden_sizes, 1), Activation::kIdentity);
      net(chain(input_dim + 1, hidden_sizes, 1), Activation::kIdentity);
      break;
    case ModelKind::kSdr: {
      net(chain(input_dim, hidden_sizes, 0), Activation::kRelu);
      net({width, 1}, Activation::kIdentity);
      const std::vector<std::size_t> head{width, width, 1};
      net(head, Activation::kIdentity);
      net(head, Activation::kIdentity);
      break;
    }
  }
  return m;
}

void swap_arms(UpliftModel& model) {
  switch (model.kind) {
    case ModelKind::kTM: {
      Layer& out = model.networks[0].layers.back();
      for (std::size_t r = 0; r < out.weight.rows(); ++r) std::swap(out.weight(r, 0), out.weight(r, 1));
      std::swap(out.bias[0], out.bias[1]);
      break;
    }
    case ModelKind::kTarnet: std::swap(model.networks[1], model.networks[2]); break;
    case ModelKind::kSdr: std::swap(model.networks[2], model.networks[3]); break;
    case ModelKind::kDdr: throw ConfigError("swap_arms: DDR arms are not interchangeable");
  }
}

ModelPass forward_model(const UpliftModel& model, const Matrix& raw_x,
                        std::span<const double> frozen_feed) {
  if (raw_x.cols() != model.input_dim) {
    throw ShapeError("model expects " + std::to_string(model.input_dim) + " features, got " +
                     std::to_string(raw_x.cols()));
  }
  const Matrix x = model.input_transform.apply(raw_x);
  const std::size_t n = x.rows();
  ModelPass pass;
  const auto& nets = model.networks;
  // Later heads hold references into earlier entries.
  pass.nets.reserve(nets.size());
  switch (model.kind) {
    case ModelKind::kTM: {
      pass.nets.push_back(forward(nets[0], x));
      pass.logit_c = column(pass.nets[0].output, 0);
      pass.logit_t = column(pass.nets[0].output, 1);
      break;
    }
    case ModelKind::kTarnet: {
      pass.nets.push_back(forward(nets[0], x));
      const Matrix& h = pass.nets[0].output;
      pass.nets.push_back(forward(nets[1], h));
      pass.nets.push_back(forward(nets[2], h));
      pass.logit_c = column(pass.nets[1].output, 0);
      pass.logit_t = column(pass.nets[2].output, 0);
      break;
    }
    case ModelKind::kDdr: {
      pass.nets.push_back(forward(nets[0], x));
      pass.logit_c = column(pass.nets[0].output, 0);
      const std::vector<double> live_feed = to_probabilities(pass.logit_c);
      std::span<const double> feed = live_feed;
      if (!frozen_feed.empty()) {
        if (frozen_feed.size() != n) throw ShapeError("forward_model: frozen feed length");
        feed = frozen_feed;
      }
      Matrix xt(n, x.cols() + 1);
      for (std::size_t i = 0; i < n; ++i) {
        auto src = x.row(i);
        auto dst = xt.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
        dst.back() = feed[i];
      }
      pass.nets.push_back(forward(nets[1], xt));
      pass.logit_t = column(pass.nets[1].output, 0);
      break;
    }
    case ModelKind::kSdr: {
      pass.nets.push_back(forward(nets[0], x));
      const Matrix& h = pass.nets[0].output;
      for (std::size_t k = 1; k <= 3; ++k) pass.nets.push_back(forward(nets[k], h));
      pass.logit_c.resize(n);
      pass.logit_t.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double shared = pass.nets[1].output(i, 0);
        pass.logit_c[i] = shared + pass.nets[2].output(i, 0);
        pass.logit_t[i] = shared + pass.nets[3].output(i, 0);
      }
      break;
    }
  }
  pass.p_t = to_probabilities(pass.logit_t);
  pass.p_c = to_probabilities(pass.logit_c);
  return pass;
}

Prediction predict(const UpliftModel& model, const Matrix& x) {
  constexpr std::size_t kChunk = 4096;
  Prediction out;
  auto append = [&](const ModelPass& pass) {
    out.p_t.insert(out.p_t.end(), pass.p_t.begin(), pass.p_t.end());
    out.p_c.insert(out.p_c.end(), pass.p_c.begin(), pass.p_c.end());
  };
  if (x.rows() <= kChunk) {
    append(forward_model(model, x));
  } else {
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < x.rows(); start += kChunk) {
      const std::size_t end = std::min(x.rows(), start + kChunk);
      idx.resize(end - start);
      for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
      append(forward_model(model, gather_rows(x, idx)));
    }
  }
  out.uplift.resize(out.p_t.size());
  for (std::size_t i = 0; i < out.uplift.size(); ++i) out.uplift[i] = out.p_t[i] - out.p_c[i];
  return out;
}

void accumulate(ModelGrads& a, const ModelGrads& b) {
  if (a.networks.size() != b.networks.size()) throw ShapeError("accumulate: network count mismatch");
  for (std::size_t k = 0; k < a.networks.size(); ++k) accumulate(a.networks[k], b.networks[k]);
}

ModelGrads backward_model(const UpliftModel& model, const ModelPass& pass,
                          std::span<const double> gt, std::span<const double> gc) {
  const std::size_t n = pass.rows();
  if (gt.size() != n || gc.size() != n) throw ShapeError("backward_model: gradient length mismatch");
  if (pass.nets.size() != model.networks.size()) throw ShapeError("backward_model: pass mismatch");
  const auto& nets = model.networks;
  ModelGrads g;
  g.networks.resize(nets.size());
  switch (model.kind) {
    case ModelKind::kTM: {
      Matrix d(n, 2);
      for (std::size_t i = 0; i < n; ++i) {
        d(i, 0) = gc[i];
        d(i, 1) = gt[i];
      }
      g.networks[0] = backward(nets[0], pass.nets[0].cache, d).grads;
      break;
    }
    case ModelKind::kTarnet: {
      auto bc = backward(nets[1], pass.nets[1].cache, column_matrix(gc));
      auto bt = backward(nets[2], pass.nets[2].cache, column_matrix(gt));
      Matrix dh = bc.input_grad;
      auto dv = dh.values();
      auto tv = bt.input_grad.values();
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += tv[i];
      g.networks[0] = backward(nets[0], pass.nets[0].cache, dh).grads;
      g.networks[1] = std::move(bc.grads);
      g.networks[2] = std::move(bt.grads);
      break;
    }
    case ModelKind::kDdr: {
      g.networks[0] = backward(nets[0], pass.nets[0].cache, column_matrix(gc)).grads;
      // The fed-in control probability is a constant for the treated net.
      g.networks[1] = backward(nets[1], pass.nets[1].cache, column_matrix(gt)).grads;
      break;
    }
    case ModelKind::kSdr: {
      std::vector<double> gs(n);
      for (std::size_t i = 0; i < n; ++i) gs[i] = gt[i] + gc[i];
      auto bs = backward(nets[1], pass.nets[1].cache, column_matrix(gs));
      auto bc = backward(nets[2], pass.nets[2].cache, column_matrix(gc));
      auto bt = backward(nets[3], pass.nets[3].cache, column_matrix(gt));
      Matrix dh = bs.input_grad;
      auto dv = dh.values();
      for (const Matrix* other : {&bc.input_grad, &bt.input_grad}) {
        auto ov = other->values();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] += ov[i];
      }
      g.networks[0] = backward(nets[0], pass.nets[0].cache, dh).grads;
      g.networks[1] = std::move(bs.grads);
      g.networks[2] = std::move(bc.grads);
      g.networks[3] = std::move(bt.grads);
      break;
    }
  }
  return g;
}

FactualLoss factual_bce(std::span<const double> p_t, std::span<const double> p_c,
                        std::span<const int> treatment, std::span<const int> outcome) {
  const std::size_t n = treatment.size();
  if (p_t.size() != n || p_c.size() != n || outcome.size() != n) {
    throw ShapeError("factual_bce: length mismatch");
  }
  std::vector<int> control_mask(n);
  for (std::size_t i = 0; i < n; ++i) control_mask[i] = treatment[i] == 0 ? 1 : 0;
  BceResult treated = bce_loss(p_t, outcome, treatment);
  BceResult control = bce_loss(p_c, outcome, control_mask);
  FactualLoss out;
  out.loss = treated.loss + control.loss;
  out.logit_grad_t = std::move(treated.logit_grad);
  out.logit_grad_c = std::move(control.logit_grad);
  out.treated_empty = treated.empty();
  out.control_empty = control.empty();
  return out;
}

BaseLossResult base_loss_and_grads(const UpliftModel& model, const Matrix& x,
                                   std::span<const int> treatment, std::span<const int> outcome) {
  if (x.rows() == 0) throw ConfigError("base_loss_and_grads: empty batch");
  const ModelPass pass = forward_model(model, x);
  FactualLoss f = factual_bce(pass.p_t, pass.p_c, treatment, outcome);
  BaseLossResult r;
  r.loss = f.loss;
  r.treated_empty = f.treated_empty;
  r.control_empty = f.control_empty;
  r.grads = backward_model(model, pass, f.logit_grad_t, f.logit_grad_c);
  return r;
}

ModelOptimizer make_optimizer(const UpliftModel& model, double learning_rate) {
  ModelOptimizer opt;
  for (const auto& net : model.networks) opt.states.push_back(make_adam_state(net, learning_rate));
  return opt;
}

void adam_step(UpliftModel& model, const ModelGrads& grads, ModelOptimizer& optimizer) {
  if (grads.networks.size() != model.networks.size() ||
      optimizer.states.size() != model.networks.size()) {
    throw ShapeError("adam_step: network count mismatch");
  }
  for (std::size_t k = 0; k < model.networks.size(); ++k) {
    adam_step(model.networks[k], grads.networks[k], optimizer.states[k]);
  }
}

}  // namespace milup
