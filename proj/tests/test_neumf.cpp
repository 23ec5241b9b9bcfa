#include <cmath>
#include <map>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "spbench/neumf.hpp"

using namespace spbench;
using fixture::log_of;

namespace {

NeuMfConfig small_config(std::size_t gmf, std::size_t mlp, std::vector<std::size_t> hidden) {
  NeuMfConfig cfg;
  cfg.gmf_dim = gmf;
  cfg.mlp_dim = mlp;
  cfg.hidden = std::move(hidden);
  return cfg;
}

// d_g = 2, d_m = 2, hidden widths 4 and 2; one user, one item.
NeuMfParams hand_network() {
  auto p = NeuMfParams::zeros(1, 1, small_config(2, 2, {4, 2}));
  p.gmf_user = {1.0, 2.0};
  p.gmf_item = {0.5, -1.0};
  p.mlp_user = {1.0, -1.0};
  p.mlp_item = {2.0, 0.5};
  p.layers[0].weight = {1.0, 0.0, 0.0, 0.0,   //
                        0.0, 1.0, 0.0, 0.0,   //
                        0.5, 0.5, 0.5, 0.5,   //
                        -1.0, 0.0, 1.0, 0.0};
  p.layers[0].bias = {0.0, 0.0, 0.25, -2.0};
  p.layers[1].weight = {1.0, 1.0, 1.0, 1.0,  //
                        -1.0, 0.0, 1.0, 0.0};
  p.layers[1].bias = {0.0, -1.0};
  p.output_weight = {1.0, 0.5, 2.0, 3.0};
  p.output_bias = -1.0;
  return p;
}

void randomize(NeuMfParams& p, Xoshiro256& rng, double sd) {
  p.for_each_group([&](const std::string&, std::span<double> v) {
    for (double& x : v) x = rng.normal(0.0, sd);
  });
}

double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

bool near_kink(const NeuMfForward& f, double margin) {
  for (const auto& pre : f.pre)
    for (double v : pre)
      if (std::abs(v) < margin) return true;
  return false;
}

// Gradient of one example laid out like the full parameter groups.
std::map<std::string, std::vector<double>> dense_gradients(const NeuMfParams& p, UserId u, ItemId i,
                                                           const NeuMfGradients& g) {
  std::map<std::string, std::vector<double>> out;
  auto rows = [](std::size_t n, std::size_t width, std::size_t row, const std::vector<double>& grad) {
    std::vector<double> v(n * width, 0.0);
    std::copy(grad.begin(), grad.end(), v.begin() + static_cast<std::ptrdiff_t>(row * width));
    return v;
  };
  out["gmf_user"] = rows(p.users, p.gmf_dim, u, g.gmf_user);
  out["gmf_item"] = rows(p.items, p.gmf_dim, i, g.gmf_item);
  out["mlp_user"] = rows(p.users, p.mlp_dim, u, g.mlp_user);
  out["mlp_item"] = rows(p.items, p.mlp_dim, i, g.mlp_item);
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    out["layer" + std::to_string(l) + ".weight"] = g.layers[l].weight;
    out["layer" + std::to_string(l) + ".bias"] = g.layers[l].bias;
  }
  out["output.weight"] = g.output_weight;
  out["output.bias"] = {g.output_bias};
  return out;
}

InteractionLog tiny_fixture() {
  return log_of({{0, 0, 1}, {0, 1, 2}, {0, 2, 3}, {1, 0, 4}, {1, 1, 5}, {1, 3, 6},
                 {2, 3, 7}, {2, 4, 8}, {2, 5, 9}, {3, 4, 10}, {3, 5, 11}, {3, 2, 12}});
}

}  // namespace

TEST(NeuMfForward, ZeroParametersGiveOneHalf) {
  const auto p = NeuMfParams::zeros(3, 4, small_config(4, 3, {5, 2}));
  const auto f = neumf_forward(p, 2, 3);
  EXPECT_EQ(f.logit, 0.0);
  EXPECT_EQ(f.probability, 0.5);
}

TEST(NeuMfForward, HandComputedNetwork) {
  const auto f = neumf_forward(hand_network(), 0, 0);
  EXPECT_EQ(f.gmf, (std::vector<double>{0.5, -2.0}));
  EXPECT_EQ(f.inputs[0], (std::vector<double>{1.0, -1.0, 2.0, 0.5}));
  EXPECT_EQ(f.pre[0], (std::vector<double>{1.0, -1.0, 1.5, -1.0}));
  EXPECT_EQ(f.inputs[1], (std::vector<double>{1.0, 0.0, 1.5, 0.0}));
  EXPECT_EQ(f.pre[1], (std::vector<double>{2.5, -0.5}));
  EXPECT_EQ(f.top, (std::vector<double>{2.5, 0.0}));
  // 0.5 - 1.0 + 5.0 + 0.0 - 1.0
  EXPECT_EQ(f.logit, 3.5);
  EXPECT_DOUBLE_EQ(f.probability, 1.0 / (1.0 + std::exp(-3.5)));
}

TEST(NeuMfGradients, DeadUnitsPassNothing) {
  const auto p = hand_network();
  const auto f = neumf_forward(p, 0, 0);
  const auto g = neumf_gradients(p, 0, 0, 0, f);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(g.layers[0].weight[1 * 4 + k], 0.0);
    EXPECT_EQ(g.layers[0].weight[3 * 4 + k], 0.0);
    EXPECT_EQ(g.layers[1].weight[1 * 4 + k], 0.0);
  }
  EXPECT_EQ(g.layers[0].bias[1], 0.0);
  EXPECT_EQ(g.layers[1].bias[1], 0.0);
  EXPECT_NE(g.layers[0].bias[0], 0.0);
}

TEST(NeuMfGradients, ExactPredictionHasNoOutputError) {
  auto p = NeuMfParams::zeros(1, 1, small_config(2, 2, {3}));
  p.output_bias = 800.0;  // p rounds to exactly 1
  const auto f = neumf_forward(p, 0, 0);
  ASSERT_EQ(f.probability, 1.0);
  EXPECT_EQ(neumf_gradients(p, 0, 0, 1, f).output_error, 0.0);
}

TEST(NeuMfGradients, LabelFlipsOutputErrorSign) {
  Xoshiro256 rng(8);
  auto p = NeuMfParams::zeros(2, 2, small_config(3, 3, {4, 2}));
  for (int trial = 0; trial < 20; ++trial) {
    randomize(p, rng, 0.7);
    const auto f = neumf_forward(p, 1, 0);
    const double e0 = neumf_gradients(p, 1, 0, 0, f).output_error;
    const double e1 = neumf_gradients(p, 1, 0, 1, f).output_error;
    EXPECT_EQ(e0, f.probability);
    EXPECT_EQ(e1, f.probability - 1.0);
    EXPECT_GT(e0, 0.0);
    EXPECT_LT(e1, 0.0);
  }
}

TEST(NeuMfGradients, MatchCentralDifferencesInEveryGroup) {
  Xoshiro256 rng(77);
  const double eps = 1e-5;
  const std::vector<std::vector<std::size_t>> towers{{3}, {4, 2}, {6, 3, 2}};
  std::map<std::string, int> checked;
  int configurations = 0;
  while (configurations < 24) {
    const auto cfg = small_config(1 + rng.below(4), 1 + rng.below(4), towers[rng.below(towers.size())]);
    auto p = NeuMfParams::zeros(3, 4, cfg);
    randomize(p, rng, 0.5);
    const auto u = static_cast<UserId>(rng.below(3));
    const auto i = static_cast<ItemId>(rng.below(4));
    const int label = static_cast<int>(rng.below(2));
    const auto f = neumf_forward(p, u, i);
    if (near_kink(f, 1e-3)) continue;  // finite differences straddling a ReLU kink are meaningless
    ++configurations;
    const auto analytic = dense_gradients(p, u, i, neumf_gradients(p, u, i, label, f));
    p.for_each_group([&](const std::string& name, std::span<double> v) {
      const auto& a = analytic.at(name);
      ASSERT_EQ(a.size(), v.size()) << name;
      for (std::size_t k = 0; k < v.size(); ++k) {
        const double keep = v[k];
        v[k] = keep + eps;
        const double up = neumf_loss(neumf_forward(p, u, i).logit, label);
        v[k] = keep - eps;
        const double down = neumf_loss(neumf_forward(p, u, i).logit, label);
        v[k] = keep;
        const double numeric = (up - down) / (2 * eps);
        EXPECT_LT(relative_error(a[k], numeric), 1e-4) << name << "[" << k << "] config " << configurations;
      }
      ++checked[name];
    });
  }
  for (const char* g : {"gmf_user", "gmf_item", "mlp_user", "mlp_item", "layer0.weight", "layer0.bias",
                        "output.weight", "output.bias"})
    EXPECT_EQ(checked[g], 24) << g;
  EXPECT_GT(checked["layer2.weight"], 0);
}

TEST(NeuMfFit, FirstEpochLossNearLnTwo) {
  NeuMfConfig cfg;  // defaults
  cfg.epochs = 1;
  cfg.seed = 5;
  const auto m = fit_neumf(tiny_fixture(), cfg);
  EXPECT_NEAR(m.epoch_losses().front(), std::log(2.0), 0.2);
}

TEST(NeuMfFit, TinyInstanceLearns) {
  auto cfg = small_config(4, 4, {8, 4});
  cfg.learning_rate = 0.05;
  cfg.epochs = 300;
  cfg.seed = 3;
  const auto m = fit_neumf(tiny_fixture(), cfg);
  const auto& losses = m.epoch_losses();
  ASSERT_EQ(losses.size(), 300u);
  EXPECT_LT(losses.back(), 0.2 * losses.front());
}

TEST(NeuMfFit, DeterministicPerSeed) {
  auto cfg = small_config(3, 3, {4, 2});
  cfg.learning_rate = 0.05;
  cfg.epochs = 5;
  cfg.seed = 9;
  const auto a = fit_neumf(tiny_fixture(), cfg);
  const auto b = fit_neumf(tiny_fixture(), cfg);
  EXPECT_EQ(a.params().gmf_user, b.params().gmf_user);
  EXPECT_EQ(a.params().mlp_item, b.params().mlp_item);
  EXPECT_EQ(a.params().layers[1].weight, b.params().layers[1].weight);
  EXPECT_EQ(a.params().output_weight, b.params().output_weight);
  EXPECT_EQ(a.epoch_losses(), b.epoch_losses());
}

TEST(NeuMfFit, ConfigAndDataErrors) {
  auto cfg = small_config(3, 3, {});
  EXPECT_THROW(fit_neumf(tiny_fixture(), cfg), ConfigError);
  EXPECT_THROW(fit_neumf(InteractionLog{}, NeuMfConfig{}), DataError);
  auto diverge = small_config(3, 3, {4});
  diverge.learning_rate = 1e300;
  diverge.epochs = 3;
  EXPECT_THROW(fit_neumf(tiny_fixture(), diverge), TrainingError);
}

TEST(NeuMfScore, ZeroParamsScoreZero) {
  const auto cfg = small_config(2, 2, {3});
  NeuMfModel m(TrainingIndex(log_of({{0, 0, 1}, {1, 1, 2}})), cfg, NeuMfParams::zeros(2, 2, cfg), {});
  EXPECT_EQ(m.score(0, 1), 0.0);
  EXPECT_THROW(m.score(0, 2), DataError);
}

TEST(NeuMfScore, LogitOrderMatchesProbabilityOrder) {
  auto cfg = small_config(4, 4, {8, 4});
  cfg.learning_rate = 0.05;
  cfg.epochs = 20;
  cfg.seed = 1;
  const auto m = fit_neumf(fixture::random_log(2, 10, 12, 80), cfg);
  Xoshiro256 rng(4);
  const auto& users = m.training().known_users();
  const auto& items = m.training().known_items();
  for (int trial = 0; trial < 100; ++trial) {
    const UserId u = users[rng.below(users.size())];
    const ItemId a = items[rng.below(items.size())];
    const ItemId b = items[rng.below(items.size())];
    const double la = m.score(u, a), lb = m.score(u, b);
    const double pa = neumf_forward(m.params(), u, a).probability;
    const double pb = neumf_forward(m.params(), u, b).probability;
    if (la < lb) {
      EXPECT_LE(pa, pb);
    }
    if (la > lb) {
      EXPECT_GE(pa, pb);
    }
    EXPECT_EQ(pa, logistic(la));
  }
}

TEST(NeuMfScore, BatchEqualsSingleAcrossThreads) {
  auto cfg = small_config(5, 6, {10, 4});
  cfg.learning_rate = 0.05;
  cfg.epochs = 10;
  cfg.seed = 2;
  const auto m = fit_neumf(fixture::random_log(6, 12, 20, 150), cfg);
  const auto& items = m.training().known_items();
  for (UserId u : m.training().known_users()) {
    std::vector<double> batch(items.size()), threaded(items.size());
    m.score_items(u, items, batch);
    std::thread t([&] { m.score_items(u, items, threaded); });
    t.join();
    for (std::size_t j = 0; j < items.size(); ++j) {
      EXPECT_EQ(batch[j], m.score(u, items[j]));
      EXPECT_EQ(threaded[j], batch[j]);
    }
  }
}

TEST(NeuMfModel, SaveLoadIdenticalLogits) {
  auto cfg = small_config(3, 4, {6, 3});
  cfg.learning_rate = 0.05;
  cfg.epochs = 5;
  cfg.seed = 2;
  const auto m = fit_neumf(tiny_fixture(), cfg);
  std::stringstream s;
  m.save(s);
  EXPECT_EQ(peek_algorithm_id(s), "neumf");
  const auto loaded = NeuMfModel::load(s);
  for (UserId u = 0; u < 4; ++u)
    for (ItemId i = 0; i < 6; ++i) EXPECT_EQ(loaded.score(u, i), m.score(u, i));
  EXPECT_EQ(loaded.config().hidden, cfg.hidden);
  EXPECT_EQ(loaded.epoch_losses(), m.epoch_losses());
}
