#pragma once

// Neural matrix factorization: a GMF branch (element-wise product of user and
// item embeddings) and an MLP branch (ReLU tower over concatenated embeddings)
// joined by a logistic output unit. Trained pointwise with binary
// cross-entropy, uniform negative sampling and plain SGD. Backpropagation is
// written out by hand.

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "spbench/bpr.hpp"
#include "spbench/model.hpp"
#include "spbench/rng.hpp"

namespace spbench {

struct NeuMfConfig {
  std::size_t gmf_dim = 16;
  std::size_t mlp_dim = 32;
  std::vector<std::size_t> hidden{64, 32, 16};
  std::size_t negatives_per_positive = 4;
  double learning_rate = 0.001;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (gmf_dim == 0 || mlp_dim == 0) throw ConfigError("neumf: embedding widths must be positive");
    if (hidden.empty()) throw ConfigError("neumf: at least one hidden layer is required");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("neumf: hidden widths must be positive");
    if (negatives_per_positive == 0) throw ConfigError("neumf: negatives_per_positive must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("neumf: learning_rate must be > 0");
    if (epochs == 0) throw ConfigError("neumf: epochs must be >= 1");
  }
};

/// Fully connected layer; weight is row-major (outputs x inputs).
struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out) : inputs(in), outputs(out), weight(in * out, 0.0), bias(out, 0.0) {}
};

struct NeuMfParams {
  std::size_t gmf_dim = 0;
  std::size_t mlp_dim = 0;
  std::size_t users = 0;
  std::size_t items = 0;
  std::vector<double> gmf_user;  // users x gmf_dim
  std::vector<double> gmf_item;  // items x gmf_dim
  std::vector<double> mlp_user;  // users x mlp_dim
  std::vector<double> mlp_item;  // items x mlp_dim
  std::vector<DenseLayer> layers;
  std::vector<double> output_weight;  // gmf_dim + last hidden width
  double output_bias = 0.0;

  /// Zero-initialized parameters with shapes chained from the config.
  static NeuMfParams zeros(std::size_t n_users, std::size_t n_items, const NeuMfConfig& cfg) {
    NeuMfParams p;
    p.gmf_dim = cfg.gmf_dim;
    p.mlp_dim = cfg.mlp_dim;
    p.users = n_users;
    p.items = n_items;
    p.gmf_user.assign(n_users * cfg.gmf_dim, 0.0);
    p.gmf_item.assign(n_items * cfg.gmf_dim, 0.0);
    p.mlp_user.assign(n_users * cfg.mlp_dim, 0.0);
    p.mlp_item.assign(n_items * cfg.mlp_dim, 0.0);
    std::size_t width = 2 * cfg.mlp_dim;
    for (auto h : cfg.hidden) {
      p.layers.emplace_back(width, h);
      width = h;
    }
    p.output_weight.assign(cfg.gmf_dim + width, 0.0);
    return p;
  }

  std::size_t top_width() const noexcept { return layers.empty() ? 2 * mlp_dim : layers.back().outputs; }

  std::span<const double> gmf_u(UserId u) const { return {gmf_user.data() + u * gmf_dim, gmf_dim}; }
  std::span<const double> gmf_i(ItemId i) const { return {gmf_item.data() + i * gmf_dim, gmf_dim}; }
  std::span<const double> mlp_u(UserId u) const { return {mlp_user.data() + u * mlp_dim, mlp_dim}; }
  std::span<const double> mlp_i(ItemId i) const { return {mlp_item.data() + i * mlp_dim, mlp_dim}; }

  void check_shapes() const {
    std::size_t width = 2 * mlp_dim;
    for (const auto& l : layers) {
      if (l.inputs != width || l.weight.size() != l.inputs * l.outputs || l.bias.size() != l.outputs)
        throw TrainingError("neumf: layer shapes do not chain");
      width = l.outputs;
    }
    if (output_weight.size() != gmf_dim + width) throw TrainingError("neumf: output head width mismatch");
    if (gmf_user.size() != users * gmf_dim || gmf_item.size() != items * gmf_dim ||
        mlp_user.size() != users * mlp_dim || mlp_item.size() != items * mlp_dim)
      throw TrainingError("neumf: embedding table shape mismatch");
  }

  /// Visits every parameter group as (name, mutable view).
  void for_each_group(const std::function<void(const std::string&, std::span<double>)>& fn) {
    fn("gmf_user", gmf_user);
    fn("gmf_item", gmf_item);
    fn("mlp_user", mlp_user);
    fn("mlp_item", mlp_item);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      fn(fmt::format("layer{}.weight", l), layers[l].weight);
      fn(fmt::format("layer{}.bias", l), layers[l].bias);
    }
    fn("output.weight", output_weight);
    fn("output.bias", std::span<double>(&output_bias, 1));
  }

  bool finite() const noexcept {
    auto ok = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!ok(gmf_user) || !ok(gmf_item) || !ok(mlp_user) || !ok(mlp_item) || !ok(output_weight)) return false;
    for (const auto& l : layers)
      if (!ok(l.weight) || !ok(l.bias)) return false;
    return std::isfinite(output_bias);
  }
};

/// Forward pass with the activations needed for backpropagation.
struct NeuMfForward {
  std::vector<double> gmf;                  // gmf_user[u] ⊙ gmf_item[i]
  std::vector<std::vector<double>> inputs;  // inputs[l] feeds layer l; inputs[0] = concat(mlp_u, mlp_i)
  std::vector<std::vector<double>> pre;     // pre-activations of each layer
  std::vector<double> top;                  // ReLU output of the last layer
  double logit = 0.0;
  double probability = 0.5;
};

namespace detail {

/// out[o] = (Σ_k w[o,k] x[k]) + b[o], summed left to right over k.
inline void affine(const DenseLayer& layer, std::span<const double> x, std::span<double> out) {
  for (std::size_t o = 0; o < layer.outputs; ++o) {
    const double* w = layer.weight.data() + o * layer.inputs;
    double s = 0.0;
    for (std::size_t k = 0; k < layer.inputs; ++k) s += w[k] * x[k];
    out[o] = s + layer.bias[o];
  }
}

inline double head(const NeuMfParams& p, std::span<const double> gmf, std::span<const double> top) {
  double s = 0.0;
  for (std::size_t k = 0; k < gmf.size(); ++k) s += p.output_weight[k] * gmf[k];
  for (std::size_t k = 0; k < top.size(); ++k) s += p.output_weight[gmf.size() + k] * top[k];
  return s + p.output_bias;
}

}  // namespace detail

inline void neumf_forward(const NeuMfParams& p, UserId u, ItemId i, NeuMfForward& f) {
  if (u >= p.users || i >= p.items) throw DataError(fmt::format("neumf: index out of range (user {}, item {})", u, i));
  const auto gu = p.gmf_u(u), gi = p.gmf_i(i);
  f.gmf.resize(p.gmf_dim);
  for (std::size_t k = 0; k < p.gmf_dim; ++k) f.gmf[k] = gu[k] * gi[k];

  f.inputs.resize(p.layers.size());
  f.pre.resize(p.layers.size());
  auto& x0 = f.inputs[0];
  x0.resize(2 * p.mlp_dim);
  const auto mu = p.mlp_u(u), mi = p.mlp_i(i);
  std::copy(mu.begin(), mu.end(), x0.begin());
  std::copy(mi.begin(), mi.end(), x0.begin() + static_cast<std::ptrdiff_t>(p.mlp_dim));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    f.pre[l].resize(layer.outputs);
    detail::affine(layer, f.inputs[l], f.pre[l]);
    auto& next = (l + 1 < p.layers.size()) ? f.inputs[l + 1] : f.top;
    next.resize(layer.outputs);
    for (std::size_t o = 0; o < layer.outputs; ++o) next[o] = f.pre[l][o] > 0.0 ? f.pre[l][o] : 0.0;
  }
  f.logit = detail::head(p, f.gmf, f.top);
  f.probability = logistic(f.logit);
}

inline NeuMfForward neumf_forward(const NeuMfParams& p, UserId u, ItemId i) {
  NeuMfForward f;
  neumf_forward(p, u, i, f);
  return f;
}

/// Binary cross-entropy of a logit against a {0,1} label, computed stably.
inline double neumf_loss(double logit, int label) noexcept { return label ? softplus(-logit) : softplus(logit); }

/// Gradients of one example's BCE loss. Embedding gradients cover only the
/// rows of the example's user and item.
struct NeuMfGradients {
  double output_error = 0.0;  // dL/dlogit = p - y
  std::vector<double> gmf_user, gmf_item, mlp_user, mlp_item;
  std::vector<DenseLayer> layers;
  std::vector<double> output_weight;
  double output_bias = 0.0;
};

inline void neumf_gradients(const NeuMfParams& p, UserId u, ItemId i, int label, const NeuMfForward& f,
                            NeuMfGradients& g) {
  const double err = f.probability - static_cast<double>(label);
  g.output_error = err;
  const std::size_t dg = p.gmf_dim;

  g.output_bias = err;
  g.output_weight.resize(p.output_weight.size());
  for (std::size_t k = 0; k < dg; ++k) g.output_weight[k] = err * f.gmf[k];
  for (std::size_t k = 0; k < f.top.size(); ++k) g.output_weight[dg + k] = err * f.top[k];

  const auto gu = p.gmf_u(u), gi = p.gmf_i(i);
  g.gmf_user.resize(dg);
  g.gmf_item.resize(dg);
  for (std::size_t k = 0; k < dg; ++k) {
    const double d = err * p.output_weight[k];
    g.gmf_user[k] = d * gi[k];
    g.gmf_item[k] = d * gu[k];
  }

  // Error w.r.t. the output of the current layer, walked top-down.
  std::vector<double> delta(f.top.size());
  for (std::size_t k = 0; k < f.top.size(); ++k) delta[k] = err * p.output_weight[dg + k];
  g.layers.resize(p.layers.size());
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const auto& layer = p.layers[l];
    auto& gl = g.layers[l];
    gl.inputs = layer.inputs;
    gl.outputs = layer.outputs;
    gl.weight.resize(layer.weight.size());
    gl.bias.resize(layer.outputs);
    const auto& x = f.inputs[l];
    std::vector<double> below(layer.inputs, 0.0);
    for (std::size_t o = 0; o < layer.outputs; ++o) {
      const double da = f.pre[l][o] > 0.0 ? delta[o] : 0.0;  // ReLU'(0) = 0
      gl.bias[o] = da;
      double* gw = gl.weight.data() + o * layer.inputs;
      const double* w = layer.weight.data() + o * layer.inputs;
      for (std::size_t k = 0; k < layer.inputs; ++k) {
        gw[k] = da * x[k];
        below[k] += w[k] * da;
      }
    }
    delta = std::move(below);
  }
  g.mlp_user.assign(delta.begin(), delta.begin() + static_cast<std::ptrdiff_t>(p.mlp_dim));
  g.mlp_item.assign(delta.begin() + static_cast<std::ptrdiff_t>(p.mlp_dim), delta.end());
}

inline NeuMfGradients neumf_gradients(const NeuMfParams& p, UserId u, ItemId i, int label, const NeuMfForward& f) {
  NeuMfGradients g;
  neumf_gradients(p, u, i, label, f, g);
  return g;
}

/// params -= rate * grads, touching only the example's embedding rows.
inline void neumf_apply(NeuMfParams& p, UserId u, ItemId i, const NeuMfGradients& g, double rate) {
  auto step = [rate](double* dst, const std::vector<double>& grad) {
    for (std::size_t k = 0; k < grad.size(); ++k) dst[k] -= rate * grad[k];
  };
  step(p.gmf_user.data() + u * p.gmf_dim, g.gmf_user);
  step(p.gmf_item.data() + i * p.gmf_dim, g.gmf_item);
  step(p.mlp_user.data() + u * p.mlp_dim, g.mlp_user);
  step(p.mlp_item.data() + i * p.mlp_dim, g.mlp_item);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    step(p.layers[l].weight.data(), g.layers[l].weight);
    step(p.layers[l].bias.data(), g.layers[l].bias);
  }
  step(p.output_weight.data(), g.output_weight);
  p.output_bias -= rate * g.output_bias;
}

class NeuMfModel {
 public:
  static constexpr std::string_view id = "neumf";

  NeuMfModel(TrainingIndex training, NeuMfConfig config, NeuMfParams params, std::vector<double> epoch_losses)
      : training_(std::move(training)),
        config_(std::move(config)),
        params_(std::move(params)),
        epoch_losses_(std::move(epoch_losses)) {
    params_.check_shapes();
  }

  std::string_view algorithm_id() const noexcept { return id; }
  const TrainingIndex& training() const noexcept { return training_; }
  const NeuMfConfig& config() const noexcept { return config_; }
  const NeuMfParams& params() const noexcept { return params_; }
  const std::vector<double>& epoch_losses() const noexcept { return epoch_losses_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

  /// The output logit; monotone in the predicted probability.
  double score(UserId u, ItemId i) const {
    require(u, i);
    NeuMfForward f;
    neumf_forward(params_, u, i, f);
    return f.logit;
  }

  /// Batch scoring. Partial sums of the first layer over the user half of its
  /// input are reused across items; continuing the same left-to-right sum
  /// keeps results identical to `score`.
  void score_items(UserId u, std::span<const ItemId> items, std::span<double> out) const {
    if (items.empty()) return;
    require(u, items.front());
    const auto& first = params_.layers.front();
    const std::size_t dm = params_.mlp_dim;
    std::vector<double> user_part(first.outputs);
    const auto mu = params_.mlp_u(u);
    for (std::size_t o = 0; o < first.outputs; ++o) {
      const double* w = first.weight.data() + o * first.inputs;
      double s = 0.0;
      for (std::size_t k = 0; k < dm; ++k) s += w[k] * mu[k];
      user_part[o] = s;
    }
    const auto gu = params_.gmf_u(u);
    std::vector<double> gmf(params_.gmf_dim), a, b;
    for (std::size_t j = 0; j < items.size(); ++j) {
      const ItemId i = items[j];
      require(u, i);
      const auto gi = params_.gmf_i(i);
      for (std::size_t k = 0; k < gmf.size(); ++k) gmf[k] = gu[k] * gi[k];
      const auto mi = params_.mlp_i(i);
      a.resize(first.outputs);
      for (std::size_t o = 0; o < first.outputs; ++o) {
        const double* w = first.weight.data() + o * first.inputs + dm;
        double s = user_part[o];
        for (std::size_t k = 0; k < dm; ++k) s += w[k] * mi[k];
        const double pre = s + first.bias[o];
        a[o] = pre > 0.0 ? pre : 0.0;
      }
      for (std::size_t l = 1; l < params_.layers.size(); ++l) {
        const auto& layer = params_.layers[l];
        b.resize(layer.outputs);
        detail::affine(layer, a, b);
        for (double& v : b) v = v > 0.0 ? v : 0.0;
        std::swap(a, b);
      }
      out[j] = detail::head(params_, gmf, a);
    }
  }

  void save(std::ostream& out) const {
    BinaryWriter w(out);
    w.header(id);
    w.u64(config_.gmf_dim);
    w.u64(config_.mlp_dim);
    w.u64(config_.hidden.size());
    for (auto h : config_.hidden) w.u64(h);
    w.u64(config_.negatives_per_positive);
    w.f64(config_.learning_rate);
    w.u64(config_.epochs);
    w.u64(config_.seed);
    w.training(training_);
    w.u64(params_.users);
    w.u64(params_.items);
    w.doubles(params_.gmf_user);
    w.doubles(params_.gmf_item);
    w.doubles(params_.mlp_user);
    w.doubles(params_.mlp_item);
    for (const auto& l : params_.layers) {
      w.doubles(l.weight);
      w.doubles(l.bias);
    }
    w.doubles(params_.output_weight);
    w.f64(params_.output_bias);
    w.doubles(epoch_losses_);
  }

  static NeuMfModel load(std::istream& in) {
    BinaryReader r(in);
    r.header(id);
    NeuMfConfig cfg;
    cfg.gmf_dim = r.u64();
    cfg.mlp_dim = r.u64();
    cfg.hidden.resize(r.u64());
    if (cfg.hidden.size() > 1024) throw IoError("neumf: corrupt layer count");
    for (auto& h : cfg.hidden) h = r.u64();
    cfg.negatives_per_positive = r.u64();
    cfg.learning_rate = r.f64();
    cfg.epochs = r.u64();
    cfg.seed = r.u64();
    auto training = r.training();
    const auto users = r.u64();
    const auto items = r.u64();
    auto params = NeuMfParams::zeros(users, items, cfg);
    params.gmf_user = r.doubles();
    params.gmf_item = r.doubles();
    params.mlp_user = r.doubles();
    params.mlp_item = r.doubles();
    for (auto& l : params.layers) {
      l.weight = r.doubles();
      l.bias = r.doubles();
    }
    params.output_weight = r.doubles();
    params.output_bias = r.f64();
    auto losses = r.doubles();
    return NeuMfModel(std::move(training), std::move(cfg), std::move(params), std::move(losses));
  }

 private:
  void require(UserId u, ItemId i) const {
    if (!training_.knows_user(u) || !training_.knows_item(i))
      throw DataError(fmt::format("neumf: unknown index (user {}, item {})", u, i));
  }

  TrainingIndex training_;
  NeuMfConfig config_;
  NeuMfParams params_;
  std::vector<double> epoch_losses_;
  std::vector<std::string> warnings_;
};

/// Embeddings from N(0, 0.01²), hidden weights from N(0, 2/fan_in) (He), the
/// output head from N(0, 1/fan_in), biases zero.
inline NeuMfParams init_neumf_params(std::size_t n_users, std::size_t n_items, const NeuMfConfig& cfg,
                                     Xoshiro256& rng) {
  auto p = NeuMfParams::zeros(n_users, n_items, cfg);
  for (auto* v : {&p.gmf_user, &p.gmf_item, &p.mlp_user, &p.mlp_item})
    for (double& x : *v) x = rng.normal(0.0, 0.01);
  for (auto& l : p.layers) {
    const double sd = std::sqrt(2.0 / static_cast<double>(l.inputs));
    for (double& x : l.weight) x = rng.normal(0.0, sd);
  }
  const double sd = std::sqrt(1.0 / static_cast<double>(p.output_weight.size()));
  for (double& x : p.output_weight) x = rng.normal(0.0, sd);
  return p;
}

inline NeuMfModel fit_neumf(const InteractionLog& train, const NeuMfConfig& config) {
  config.validate();
  if (train.empty()) throw DataError("neumf: empty training set");
  TrainingIndex index(train);
  Xoshiro256 rng(config.seed);
  auto params = init_neumf_params(index.user_capacity(), index.item_capacity(), config, rng);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> losses;
  std::vector<UserId> starved;
  NeuMfForward fwd;
  NeuMfGradients grad;
  auto step = [&](UserId u, ItemId i, int label) {
    neumf_forward(params, u, i, fwd);
    const double loss = neumf_loss(fwd.logit, label);
    neumf_gradients(params, u, i, label, fwd, grad);
    neumf_apply(params, u, i, grad, config.learning_rate);
    return loss;
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    double total = 0.0;
    std::size_t examples = 0;
    for (std::size_t idx : order) {
      const auto& x = train.interactions[idx];
      total += step(x.user, x.item, 1);
      ++examples;
      for (std::size_t n = 0; n < config.negatives_per_positive; ++n) {
        ItemId neg = 0;
        if (!sample_negative(index, x.user, rng, neg)) {
          if (epoch == 0) starved.push_back(x.user);
          break;
        }
        total += step(x.user, neg, 0);
        ++examples;
      }
    }
    if (!params.finite())
      throw TrainingError(fmt::format("neumf: non-finite parameters in epoch {}; last good epoch {}", epoch + 1,
                                      epoch));
    losses.push_back(examples ? total / static_cast<double>(examples) : 0.0);
  }
  NeuMfModel model(std::move(index), config, std::move(params), std::move(losses));
  std::sort(starved.begin(), starved.end());
  starved.erase(std::unique(starved.begin(), starved.end()), starved.end());
  for (UserId u : starved)
    model.add_warning(fmt::format("neumf: user {} interacted with every item; negatives skipped", u));
  return model;
}

}  // namespace spbench
