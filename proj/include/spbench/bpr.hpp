#pragma once

// Matrix factorization trained with the pairwise BPR objective by plain
// single-sample SGD and uniform negative sampling.

#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "spbench/model.hpp"
#include "spbench/rng.hpp"

namespace spbench {

/// Numerically stable logistic function.
inline double logistic(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

/// -ln σ(x_ui - x_uj)
inline double bpr_pair_loss(double x_ui, double x_uj) noexcept { return softplus(x_uj - x_ui); }

struct BprConfig {
  std::size_t dim = 64;
  double learning_rate = 0.01;
  double l2_reg = 0.01;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0) throw ConfigError("bprmf: dim must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("bprmf: learning_rate must be > 0");
    if (!(l2_reg >= 0.0)) throw ConfigError("bprmf: l2_reg must be >= 0");
    if (epochs == 0) throw ConfigError("bprmf: epochs must be >= 1");
  }
};

/// Row-major user (P) and item (Q) factor matrices.
struct MfParams {
  std::size_t dim = 0;
  std::size_t users = 0;
  std::size_t items = 0;
  std::vector<double> p;
  std::vector<double> q;

  MfParams() = default;
  MfParams(std::size_t n_users, std::size_t n_items, std::size_t d)
      : dim(d), users(n_users), items(n_items), p(n_users * d, 0.0), q(n_items * d, 0.0) {}

  std::span<double> user(UserId u) { return {p.data() + static_cast<std::size_t>(u) * dim, dim}; }
  std::span<const double> user(UserId u) const { return {p.data() + static_cast<std::size_t>(u) * dim, dim}; }
  std::span<double> item(ItemId i) { return {q.data() + static_cast<std::size_t>(i) * dim, dim}; }
  std::span<const double> item(ItemId i) const { return {q.data() + static_cast<std::size_t>(i) * dim, dim}; }

  double dot(UserId u, ItemId i) const noexcept {
    const double* a = p.data() + static_cast<std::size_t>(u) * dim;
    const double* b = q.data() + static_cast<std::size_t>(i) * dim;
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += a[k] * b[k];
    return s;
  }

  bool finite() const noexcept {
    auto ok = [](double x) { return std::isfinite(x); };
    return std::all_of(p.begin(), p.end(), ok) && std::all_of(q.begin(), q.end(), ok);
  }
};

struct BprTriple {
  UserId user = 0;
  ItemId positive = 0;
  ItemId negative = 0;
};

/// Gradient contributions of the regularized pair objective
///   -ln σ(x_ui - x_uj) + λ/2 (|P_u|² + |Q_i|² + |Q_j|²).
/// When positive == negative the two item contributions refer to the same row.
struct BprGradients {
  std::vector<double> user;
  std::vector<double> positive;
  std::vector<double> negative;
};

inline void bpr_gradients(const MfParams& params, const BprTriple& t, double l2_reg, BprGradients& g) {
  const auto pu = params.user(t.user);
  const auto qi = params.item(t.positive);
  const auto qj = params.item(t.negative);
  const double e = logistic(params.dot(t.user, t.negative) - params.dot(t.user, t.positive));
  g.user.resize(params.dim);
  g.positive.resize(params.dim);
  g.negative.resize(params.dim);
  for (std::size_t k = 0; k < params.dim; ++k) {
    g.user[k] = -e * (qi[k] - qj[k]) + l2_reg * pu[k];
    g.positive[k] = -e * pu[k] + l2_reg * qi[k];
    g.negative[k] = e * pu[k] + l2_reg * qj[k];
  }
}

inline BprGradients bpr_gradients(const MfParams& params, const BprTriple& t, double l2_reg) {
  BprGradients g;
  bpr_gradients(params, t, l2_reg, g);
  return g;
}

class BprModel {
 public:
  static constexpr std::string_view id = "bprmf";

  BprModel(TrainingIndex training, BprConfig config, MfParams params, std::vector<double> epoch_losses)
      : training_(std::move(training)),
        config_(config),
        params_(std::move(params)),
        epoch_losses_(std::move(epoch_losses)) {}

  std::string_view algorithm_id() const noexcept { return id; }
  const TrainingIndex& training() const noexcept { return training_; }
  const BprConfig& config() const noexcept { return config_; }
  const MfParams& params() const noexcept { return params_; }
  const std::vector<double>& epoch_losses() const noexcept { return epoch_losses_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

  double score(UserId u, ItemId i) const {
    if (!training_.knows_user(u) || !training_.knows_item(i))
      throw DataError(fmt::format("bprmf: unknown index (user {}, item {})", u, i));
    return params_.dot(u, i);
  }

  void score_items(UserId u, std::span<const ItemId> items, std::span<double> out) const {
    for (std::size_t j = 0; j < items.size(); ++j) out[j] = score(u, items[j]);
  }

  void save(std::ostream& out) const {
    BinaryWriter w(out);
    w.header(id);
    w.u64(config_.dim);
    w.f64(config_.learning_rate);
    w.f64(config_.l2_reg);
    w.u64(config_.epochs);
    w.u64(config_.seed);
    w.training(training_);
    w.u64(params_.users);
    w.u64(params_.items);
    w.doubles(params_.p);
    w.doubles(params_.q);
    w.doubles(epoch_losses_);
  }

  static BprModel load(std::istream& in) {
    BinaryReader r(in);
    r.header(id);
    BprConfig cfg;
    cfg.dim = r.u64();
    cfg.learning_rate = r.f64();
    cfg.l2_reg = r.f64();
    cfg.epochs = r.u64();
    cfg.seed = r.u64();
    auto training = r.training();
    MfParams params;
    params.dim = cfg.dim;
    params.users = r.u64();
    params.items = r.u64();
    params.p = r.doubles();
    params.q = r.doubles();
    if (params.p.size() != params.users * params.dim || params.q.size() != params.items * params.dim)
      throw IoError("bprmf: factor matrix shape mismatch in model file");
    auto losses = r.doubles();
    return BprModel(std::move(training), cfg, std::move(params), std::move(losses));
  }

 private:
  TrainingIndex training_;
  BprConfig config_;
  MfParams params_;
  std::vector<double> epoch_losses_;
  std::vector<std::string> warnings_;
};

/// Draws a uniform item from `pool` that the user has not interacted with.
/// Returns false when the user has seen every item.
inline bool sample_negative(const TrainingIndex& train, UserId u, Xoshiro256& rng, ItemId& out) {
  const auto& pool = train.known_items();
  if (train.items_of(u).size() >= pool.size()) return false;
  do {
    out = pool[rng.below(pool.size())];
  } while (train.has(u, out));
  return true;
}

/// Factors start from N(0, 0.1²). Each epoch visits every training interaction
/// once in shuffled order, draws one unseen negative and takes one SGD step.
inline BprModel fit_bpr(const InteractionLog& train, const BprConfig& config) {
  config.validate();
  if (train.empty()) throw DataError("bprmf: empty training set");
  TrainingIndex index(train);
  Xoshiro256 rng(config.seed);
  MfParams params(index.user_capacity(), index.item_capacity(), config.dim);
  for (double& x : params.p) x = rng.normal(0.0, 0.1);
  for (double& x : params.q) x = rng.normal(0.0, 0.1);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> losses;
  losses.reserve(config.epochs);
  std::vector<UserId> starved;
  const double lr = config.learning_rate;
  BprGradients grad;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t idx : order) {
      const auto& x = train.interactions[idx];
      ItemId neg = 0;
      if (!sample_negative(index, x.user, rng, neg)) {
        if (epoch == 0) starved.push_back(x.user);
        continue;
      }
      const double x_ui = params.dot(x.user, x.item);
      const double x_uj = params.dot(x.user, neg);
      total += bpr_pair_loss(x_ui, x_uj);
      ++steps;
      bpr_gradients(params, {x.user, x.item, neg}, config.l2_reg, grad);
      auto pu = params.user(x.user);
      auto qi = params.item(x.item);
      auto qj = params.item(neg);
      for (std::size_t k = 0; k < config.dim; ++k) {
        pu[k] -= lr * grad.user[k];
        qi[k] -= lr * grad.positive[k];
        qj[k] -= lr * grad.negative[k];
      }
    }
    if (!params.finite())
      throw TrainingError(fmt::format("bprmf: non-finite parameters after epoch {} (last mean loss {})", epoch + 1,
                                      losses.empty() ? 0.0 : losses.back()));
    losses.push_back(steps ? total / static_cast<double>(steps) : 0.0);
  }
  BprModel model(std::move(index), config, std::move(params), std::move(losses));
  std::sort(starved.begin(), starved.end());
  starved.erase(std::unique(starved.begin(), starved.end()), starved.end());
  for (UserId u : starved)
    model.add_warning(fmt::format("bprmf: user {} interacted with every item; no negative available, skipped", u));
  return model;
}

}  // namespace spbench
