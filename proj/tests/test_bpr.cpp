#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "spbench/bpr.hpp"

using namespace spbench;
using fixture::log_of;

namespace {

// Regularized pair objective evaluated directly from the parameters.
double objective(const MfParams& p, const BprTriple& t, double l2) {
  double reg = 0.0;
  for (double v : p.user(t.user)) reg += v * v;
  for (double v : p.item(t.positive)) reg += v * v;
  for (double v : p.item(t.negative)) reg += v * v;
  return bpr_pair_loss(p.dot(t.user, t.positive), p.dot(t.user, t.negative)) + 0.5 * l2 * reg;
}

double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

MfParams random_params(Xoshiro256& rng, std::size_t users, std::size_t items, std::size_t dim, double sd) {
  MfParams p(users, items, dim);
  for (double& x : p.p) x = rng.normal(0.0, sd);
  for (double& x : p.q) x = rng.normal(0.0, sd);
  return p;
}

// 4 users, 6 items, 12 interactions
InteractionLog tiny_fixture() {
  return log_of({{0, 0, 1}, {0, 1, 2}, {0, 2, 3}, {1, 0, 4}, {1, 1, 5}, {1, 3, 6},
                 {2, 3, 7}, {2, 4, 8}, {2, 5, 9}, {3, 4, 10}, {3, 5, 11}, {3, 2, 12}});
}

double squared_norm(const MfParams& p) {
  double s = 0.0;
  for (double x : p.p) s += x * x;
  for (double x : p.q) s += x * x;
  return s;
}

}  // namespace

TEST(BprLoss, Values) {
  EXPECT_NEAR(bpr_pair_loss(0.3, 0.3), std::log(2.0), 1e-15);
  EXPECT_LT(bpr_pair_loss(800.0, 0.0), 1e-300);
  // 40-digit reference value of ln(1 + e^30)
  EXPECT_NEAR(bpr_pair_loss(0.0, 30.0), 30.00000000000009357622968839736779, 1e-13);
  EXPECT_EQ(bpr_pair_loss(0.0, 800.0), 800.0);
  EXPECT_TRUE(std::isfinite(bpr_pair_loss(-1e5, 1e5)));
}

TEST(BprGradients, ZeroParamsGiveZeroUserGradient) {
  MfParams p(2, 3, 4);
  const auto g = bpr_gradients(p, {0, 1, 2}, 0.0);
  for (double v : g.user) EXPECT_EQ(v, 0.0);
}

TEST(BprGradients, DegeneratePairOnlyRegularizes) {
  Xoshiro256 rng(3);
  const auto p = random_params(rng, 2, 3, 5, 0.5);
  const double l2 = 0.05;
  const auto g = bpr_gradients(p, {1, 2, 2}, l2);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_DOUBLE_EQ(g.user[k], l2 * p.user(1)[k]);
    EXPECT_NEAR(g.positive[k] + g.negative[k], 2.0 * l2 * p.item(2)[k], 1e-15);
  }
}

TEST(BprGradients, MatchCentralDifferences) {
  Xoshiro256 rng(2024);
  const double eps = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t dim = 2 + rng.below(7);
    auto p = random_params(rng, 3, 5, dim, 0.5);
    const BprTriple t{static_cast<UserId>(rng.below(3)), static_cast<ItemId>(rng.below(5)),
                      static_cast<ItemId>(rng.below(5))};
    const double l2 = trial % 2 ? 0.01 : 0.3;
    const auto g = bpr_gradients(p, t, l2);
    auto check = [&](double& slot, double analytic) {
      const double keep = slot;
      slot = keep + eps;
      const double up = objective(p, t, l2);
      slot = keep - eps;
      const double down = objective(p, t, l2);
      slot = keep;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, relative_error(analytic, numeric));
      EXPECT_LT(relative_error(analytic, numeric), 1e-4) << "trial " << trial;
    };
    for (std::size_t k = 0; k < dim; ++k) {
      check(p.user(t.user)[k], g.user[k]);
      if (t.positive == t.negative) {
        check(p.item(t.positive)[k], g.positive[k] + g.negative[k]);
      } else {
        check(p.item(t.positive)[k], g.positive[k]);
        check(p.item(t.negative)[k], g.negative[k]);
      }
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(BprFit, TinyInstanceLossHalves) {
  BprConfig cfg{.dim = 8, .learning_rate = 0.05, .l2_reg = 0.01, .epochs = 200, .seed = 7};
  const auto m = fit_bpr(tiny_fixture(), cfg);
  const auto& losses = m.epoch_losses();
  ASSERT_EQ(losses.size(), 200u);
  EXPECT_NEAR(losses.front(), std::log(2.0), 0.1);
  EXPECT_LE(losses.back(), 0.5 * losses.front());
}

TEST(BprFit, DeterministicPerSeed) {
  BprConfig cfg{.dim = 6, .learning_rate = 0.05, .l2_reg = 0.01, .epochs = 20, .seed = 11};
  const auto a = fit_bpr(tiny_fixture(), cfg);
  const auto b = fit_bpr(tiny_fixture(), cfg);
  EXPECT_EQ(a.params().p, b.params().p);
  EXPECT_EQ(a.params().q, b.params().q);
  cfg.seed = 12;
  EXPECT_NE(fit_bpr(tiny_fixture(), cfg).params().p, a.params().p);
}

TEST(BprFit, SeparablePreferences) {
  const auto log = log_of({{0, 0, 1}, {0, 1, 2}, {1, 2, 3}, {1, 3, 4}});
  const auto m = fit_bpr(log, {.dim = 4, .learning_rate = 0.1, .l2_reg = 0.001, .epochs = 300, .seed = 1});
  for (ItemId pos : {0u, 1u})
    for (ItemId neg : {2u, 3u}) {
      EXPECT_GT(m.score(0, pos), m.score(0, neg));
      EXPECT_GT(m.score(1, neg), m.score(1, pos));
    }
}

TEST(BprFit, StrongRegularizationShrinksFactors) {
  BprConfig cfg{.dim = 8, .learning_rate = 0.05, .l2_reg = 5.0, .epochs = 1, .seed = 3};
  double previous = squared_norm(fit_bpr(tiny_fixture(), cfg).params());
  for (std::size_t e = 2; e <= 5; ++e) {
    cfg.epochs = e;
    const double now = squared_norm(fit_bpr(tiny_fixture(), cfg).params());
    EXPECT_LT(now, previous);
    previous = now;
  }
}

TEST(BprFit, UserWithEveryItemIsSkippedWithWarning) {
  const auto log = log_of({{0, 0, 1}, {0, 1, 2}, {1, 0, 3}});
  const auto m = fit_bpr(log, {.dim = 2, .learning_rate = 0.05, .l2_reg = 0.0, .epochs = 3, .seed = 1});
  ASSERT_EQ(m.warnings().size(), 1u);
  EXPECT_NE(m.warnings()[0].find("user 0"), std::string::npos);
}

TEST(BprFit, DivergenceAborts) {
  EXPECT_THROW(fit_bpr(tiny_fixture(), {.dim = 8, .learning_rate = 1e200, .l2_reg = 1.0, .epochs = 5, .seed = 1}),
               TrainingError);
}

TEST(BprFit, ConfigValidation) {
  EXPECT_THROW(fit_bpr(tiny_fixture(), {.dim = 8, .learning_rate = 0.05, .l2_reg = 0.0, .epochs = 0, .seed = 1}),
               ConfigError);
  EXPECT_THROW(fit_bpr(InteractionLog{}, {}), DataError);
}

TEST(BprScore, Examples) {
  MfParams p(1, 1, 8);
  BprModel zero(TrainingIndex(log_of({{0, 0, 1}})), {.dim = 8}, p, {});
  EXPECT_EQ(zero.score(0, 0), 0.0);
  std::fill(p.p.begin(), p.p.end(), 1.0);
  std::fill(p.q.begin(), p.q.end(), 1.0);
  BprModel ones(TrainingIndex(log_of({{0, 0, 1}})), {.dim = 8}, p, {});
  EXPECT_EQ(ones.score(0, 0), 8.0);
  EXPECT_THROW(ones.score(0, 1), DataError);
  EXPECT_THROW(ones.score(1, 0), DataError);
}

TEST(BprScore, MatchesRecomputedDotProducts) {
  const auto m = fit_bpr(tiny_fixture(), {.dim = 5, .learning_rate = 0.05, .l2_reg = 0.01, .epochs = 10, .seed = 4});
  std::vector<ItemId> items{0, 1, 2, 3, 4, 5};
  std::vector<double> batch(items.size());
  for (UserId u = 0; u < 4; ++u) {
    m.score_items(u, items, batch);
    for (ItemId i : items) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += m.params().p[u * 5 + k] * m.params().q[i * 5 + k];
      EXPECT_EQ(m.score(u, i), s);
      EXPECT_EQ(batch[i], s);
    }
  }
}

TEST(BprModel, SaveLoadBitwise) {
  const auto m = fit_bpr(tiny_fixture(), {.dim = 5, .learning_rate = 0.05, .l2_reg = 0.01, .epochs = 10, .seed = 4});
  std::stringstream s;
  m.save(s);
  const auto loaded = BprModel::load(s);
  EXPECT_EQ(loaded.params().p, m.params().p);
  EXPECT_EQ(loaded.params().q, m.params().q);
  EXPECT_EQ(loaded.epoch_losses(), m.epoch_losses());
  EXPECT_EQ(loaded.config().learning_rate, m.config().learning_rate);
  std::stringstream wrong;
  m.save(wrong);
  std::string bytes = wrong.str();
  bytes[0] = 'X';
  std::istringstream corrupt(bytes);
  EXPECT_THROW(BprModel::load(corrupt), IoError);
}
