#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "planrl/grpo.hpp"
#include "test_support.hpp"

using namespace planrl;
using planrl::testing::normal;
using planrl::testing::uniform;

namespace {

ToyPolicy random_policy(std::size_t buckets, std::size_t horizon, std::size_t slots, Rng& rng, double scale = 1.0) {
  ToyPolicy p(buckets, horizon, slots);
  for (double& v : p.parameters()) v = normal(rng, 0.0, scale);
  return p;
}

PlanningContext context_for(int k) {
  return PlanningContext::truncated("task " + std::to_string(k), "obs", {}, 4);
}

// A rollout group with random rewards and old log-probs jittered around the
// current policy so that every branch of the surrogate shows up.
RolloutGroup random_group(const ToyPolicy& pi, Rng& rng, const TrainConfig& cfg, bool type_level, int k) {
  RolloutGroup g = sample_rollout_group(pi, context_for(k), cfg.n_rollouts, cfg.rollout_temperature, rng.next());
  for (auto& s : g.samples) {
    s.type_level = type_level;
    if (!type_level && rng.bernoulli(0.5)) s.scored_length = 1;
    s.log_prob_old = pi.log_prob(g.bucket, s.actions, s.scored_length, cfg.rollout_temperature, type_level) +
                     uniform(rng, -0.6, 0.6);
    s.reward = rng.uniform();
  }
  fill_advantages(g);
  return g;
}

}  // namespace

TEST(Advantages, ZeroMeanNearUnitScale) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(rng.uniform_int(2, 8)));
    for (double& v : r) v = rng.uniform();
    const auto a = group_advantages(r);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    EXPECT_NEAR(mean, 0.0, 1e-9);
    double m = 0.0, var = 0.0, sq = 0.0;
    for (double v : r) m += v / static_cast<double>(r.size());
    for (double v : r) var += (v - m) * (v - m) / static_cast<double>(r.size());
    for (double v : a) sq += v * v / static_cast<double>(a.size());
    const double sd = std::sqrt(var);
    EXPECT_NEAR(std::sqrt(sq), sd / (sd + kAdvantageEpsilon), 1e-9);
  }
}

TEST(Advantages, ShiftInvariantAndOrderPreserving) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(5), shifted(5);
    for (double& v : r) v = rng.uniform();
    const double c = uniform(rng, -3.0, 3.0);
    for (std::size_t i = 0; i < r.size(); ++i) shifted[i] = r[i] + c;
    const auto a = group_advantages(r), b = group_advantages(shifted);
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-6);
      for (std::size_t j = 0; j < r.size(); ++j)
        if (r[i] < r[j]) EXPECT_LT(a[i], a[j]);
    }
  }
}

TEST(Advantages, ConstantRewardsGiveZeros) {
  const std::vector<double> r(5, 0.7);
  for (double v : group_advantages(r)) EXPECT_EQ(v, 0.0);
}

TEST(Advantages, KnownValues) {
  const std::vector<double> r = {0.0, 1.0};
  const auto a = group_advantages(r);
  EXPECT_NEAR(a[0], -0.5 / (0.5 + 1e-6), 1e-15);
  EXPECT_NEAR(a[1], 0.5 / (0.5 + 1e-6), 1e-15);
}

TEST(Advantages, GroupTooSmall) {
  const std::vector<double> one = {1.0};
  EXPECT_THROW(group_advantages(one), GroupTooSmall);
  EXPECT_THROW(group_advantages(std::vector<double>{}), GroupTooSmall);
  ToyPolicy p(1, 1, 0);
  EXPECT_THROW(sample_rollout_group(p, context_for(0), 1, 1.0, 0), GroupTooSmall);
}

TEST(Surrogate, Branches) {
  TrainConfig cfg;
  // Positive advantage: capped at 1 + clip_high.
  EXPECT_DOUBLE_EQ(clipped_surrogate(std::log(2.0), 1.0, cfg).value, 1.3);
  EXPECT_EQ(clipped_surrogate(std::log(2.0), 1.0, cfg).dlogp, 0.0);
  EXPECT_DOUBLE_EQ(clipped_surrogate(std::log(1.1), 1.0, cfg).value, 1.1);
  EXPECT_DOUBLE_EQ(clipped_surrogate(std::log(1.1), 1.0, cfg).dlogp, 1.1);
  // Negative advantage: floored at 1 - clip_low, then dual floor -3|A|.
  EXPECT_DOUBLE_EQ(clipped_surrogate(std::log(0.5), -1.0, cfg).value, -0.8);
  EXPECT_DOUBLE_EQ(clipped_surrogate(std::log(2.0), -1.0, cfg).value, -2.0);
  EXPECT_DOUBLE_EQ(clipped_surrogate(std::log(5.0), -1.0, cfg).value, -3.0);
  EXPECT_EQ(clipped_surrogate(std::log(5.0), -1.0, cfg).dlogp, 0.0);
  EXPECT_EQ(clipped_surrogate(0.3, 0.0, cfg).value, 0.0);
}

TEST(Surrogate, BoundedProperty) {
  TrainConfig cfg;
  Rng rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const double lr = uniform(rng, -5.0, 5.0), a = uniform(rng, -3.0, 3.0);
    const double v = clipped_surrogate(lr, a, cfg).value;
    if (a >= 0) {
      EXPECT_LE(v, (1.0 + cfg.clip_high) * a + 1e-12);
    } else {
      EXPECT_GE(v, -cfg.clip_dual * std::abs(a) - 1e-12);
      EXPECT_LE(v, (1.0 - cfg.clip_low) * a + 1e-12);
    }
  }
}

TEST(LowVarKl, NonNegativeAndZeroAtEquality) {
  Rng rng(4);
  EXPECT_EQ(low_var_kl(-1.3, -1.3), 0.0);
  for (int trial = 0; trial < 10000; ++trial)
    EXPECT_GE(low_var_kl(uniform(rng, -10.0, 0.0), uniform(rng, -10.0, 0.0)), 0.0);
}

TEST(Sampling, DeterministicInSeed) {
  Rng rng(5);
  const auto pi = random_policy(8, 4, 2, rng);
  const auto a = sample_rollout_group(pi, context_for(1), 6, 1.0, 77);
  const auto b = sample_rollout_group(pi, context_for(1), 6, 1.0, 77);
  ASSERT_EQ(a.samples.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a.samples[i].actions, b.samples[i].actions);
    EXPECT_EQ(a.samples[i].log_prob_old, b.samples[i].log_prob_old);
  }
  EXPECT_THROW(sample_rollout_group(pi, context_for(1), 4, 0.0, 1), std::invalid_argument);
}

TEST(Sampling, FrequenciesMatchSoftmax) {
  Rng rng(6);
  const auto pi = random_policy(1, 1, 3, rng);
  const auto p = pi.probabilities(0, 0, 1.0);
  std::vector<double> counts(p.size(), 0.0);
  constexpr int kDraws = 40000;
  Rng draw(7);
  for (int i = 0; i < kDraws; ++i) counts[pi.sample(0, 1.0, draw).front()] += 1.0;
  double chi2 = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    const double expected = p[a] * kDraws;
    chi2 += (counts[a] - expected) * (counts[a] - expected) / expected;
  }
  // 39 degrees of freedom; the 0.999 quantile is about 72.
  EXPECT_LT(chi2, 72.0);
}

TEST(Sampling, StopsAfterTerminalAction) {
  ToyPolicy pi(1, 4, 0);
  // Put all mass on Finish at position 0.
  pi.parameters()[pi.encode_joint({ActionType::Finish, std::nullopt})] = 50.0;
  Rng rng(8);
  EXPECT_EQ(pi.sample(0, 1.0, rng).size(), 1u);
  EXPECT_EQ(pi.argmax_plan(0).size(), 1u);
}

TEST(TypeLevel, MarginalizesSlots) {
  Rng rng(9);
  const auto pi = random_policy(1, 1, 3, rng);
  const auto p = pi.probabilities(0, 0, 1.0);
  const std::size_t a = pi.encode_joint({ActionType::Click, 2});
  double mass = 0.0;
  for (std::size_t s = 0; s < 4; ++s) mass += p[pi.encode_joint({ActionType::Click, std::nullopt}) + s];
  EXPECT_NEAR(pi.position_log_prob(0, 0, a, 1.0, true), std::log(mass), 1e-12);
  EXPECT_NEAR(pi.position_log_prob(0, 0, a, 1.0, false), std::log(p[a]), 1e-12);
}

TEST(GradientCheck, JointAndTypeLevel) {
  Rng rng(10);
  TrainConfig cfg;
  for (bool type_level : {false, true}) {
    for (int k = 0; k < 6; ++k) {
      const auto pi = random_policy(4, 3, 2, rng, 0.5);
      const auto ref = random_policy(4, 3, 2, rng, 0.5);
      const auto group = random_group(pi, rng, cfg, type_level, k);
      EXPECT_LT(gradient_check(pi, ref, group, cfg).max_relative_error, 1e-4);
    }
  }
}

TEST(GradientCheck, ReinforceAndTemperature) {
  Rng rng(11);
  TrainConfig cfg;
  cfg.objective = PolicyObjective::Reinforce;
  cfg.rollout_temperature = 0.7;
  for (int k = 0; k < 4; ++k) {
    const auto pi = random_policy(4, 3, 2, rng, 0.5);
    const auto group = random_group(pi, rng, cfg, k % 2 == 0, k);
    EXPECT_LT(gradient_check(pi, pi, group, cfg).max_relative_error, 1e-4);
  }
}

TEST(GradientCheck, SizeLimit) {
  TrainConfig cfg;
  ToyPolicy big(100, 4, 4);  // 100 * 4 * 50 = 20000 parameters
  Rng rng(12);
  const auto group = sample_rollout_group(big, context_for(0), 2, 1.0, 1);
  EXPECT_THROW(gradient_check(big, group, cfg), SizeLimitExceeded);
}

TEST(GrpoUpdate, SmallStepLowersLoss) {
  Rng rng(13);
  TrainConfig cfg;
  for (int k = 0; k < 20; ++k) {
    auto pi = random_policy(4, 3, 2, rng, 0.5);
    const auto ref = random_policy(4, 3, 2, rng, 0.5);
    auto group = random_group(pi, rng, cfg, k % 2 == 0, k);
    const auto lg = grpo_loss_and_grad(group, pi, ref, cfg);
    double norm2 = 0.0;
    for (double g : lg.gradient) norm2 += g * g;
    if (norm2 < 1e-12) continue;
    for (std::size_t i = 0; i < lg.gradient.size(); ++i) pi.parameters()[i] -= 1e-3 * lg.gradient[i];
    EXPECT_LT(grpo_loss_and_grad(group, pi, ref, cfg).loss, lg.loss);
  }
}

TEST(GrpoUpdate, PositiveAdvantageRaisesProbability) {
  ToyPolicy pi(1, 1, 0);
  TrainConfig cfg;
  cfg.kl_coef = 0.0;
  RolloutGroup g = sample_rollout_group(pi, context_for(0), 4, 1.0, 3);
  for (std::size_t i = 0; i < g.samples.size(); ++i) g.samples[i].reward = i == 0 ? 1.0 : 0.0;
  fill_advantages(g);
  const auto before = pi.log_prob(g.bucket, g.samples[0].actions, 1, 1.0);
  const auto lg = grpo_loss_and_grad(g, pi, pi, cfg);
  for (std::size_t i = 0; i < lg.gradient.size(); ++i) pi.parameters()[i] -= 0.1 * lg.gradient[i];
  // Samples that share the winner's action dilute but never reverse the push.
  bool all_same = true;
  for (const auto& s : g.samples) all_same = all_same && s.actions == g.samples[0].actions;
  if (!all_same) EXPECT_GT(pi.log_prob(g.bucket, g.samples[0].actions, 1, 1.0), before);
}

TEST(GrpoLoss, ZeroAdvantageAndEqualPoliciesGiveZeroGradient) {
  Rng rng(14);
  const auto pi = random_policy(2, 2, 1, rng);
  TrainConfig cfg;
  auto g = sample_rollout_group(pi, context_for(2), 5, 1.0, 9);
  for (auto& s : g.samples) s.reward = 0.5;
  fill_advantages(g);
  const auto lg = grpo_loss_and_grad(g, pi, pi, cfg);
  EXPECT_EQ(lg.loss, 0.0);
  for (double v : lg.gradient) EXPECT_EQ(v, 0.0);
}

TEST(Advantages, EqualRewardsWithInexactMeanGiveZeros) {
  Rng rng(15);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::vector<double> r(static_cast<std::size_t>(rng.uniform_int(2, 16)), rng.uniform());
    for (double v : group_advantages(r)) EXPECT_EQ(v, 0.0);
  }
}

TEST(GrpoLoss, UnitRatiosWithoutKlGiveNegativeMeanAdvantage) {
  Rng rng(16);
  const auto pi = random_policy(2, 3, 1, rng);
  TrainConfig cfg;
  cfg.kl_coef = 0.0;
  auto g = sample_rollout_group(pi, context_for(3), 6, 1.0, 21);
  for (auto& s : g.samples) s.reward = rng.uniform();
  fill_advantages(g);
  double mean_adv = 0.0;
  for (const auto& s : g.samples) mean_adv += s.advantage / 6.0;
  EXPECT_NEAR(grpo_loss_and_grad(g, pi, pi, cfg).loss, -mean_adv, 1e-15);
}

TEST(GradientCheck, SmallestPolicyIsTight) {
  Rng rng(17);
  TrainConfig cfg;
  for (int k = 0; k < 10; ++k) {
    const auto pi = random_policy(1, 1, 0, rng, 0.5);  // ten logits
    const auto group = random_group(pi, rng, cfg, false, k);
    EXPECT_LT(gradient_check(pi, pi, group, cfg).max_relative_error, 1e-6);
  }
}

TEST(GradientCheck, ZeroAdvantageZeroKlIsExactlyZero) {
  Rng rng(18);
  TrainConfig cfg;
  cfg.kl_coef = 0.0;
  const auto pi = random_policy(2, 2, 1, rng);
  auto g = sample_rollout_group(pi, context_for(4), 4, 1.0, 5);
  fill_advantages(g);
  for (double v : grpo_loss_and_grad(g, pi, pi, cfg).gradient) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(gradient_check(pi, pi, g, cfg).max_relative_error, 0.0);
}

TEST(GradientCheck, ErrorShrinksWithStep) {
  Rng rng(19);
  TrainConfig cfg;
  cfg.objective = PolicyObjective::Reinforce;  // smooth everywhere
  const auto pi = random_policy(1, 2, 1, rng, 0.8);
  const auto ref = random_policy(1, 2, 1, rng, 0.8);
  const auto group = random_group(pi, rng, cfg, true, 0);
  const double coarse = gradient_check(pi, ref, group, cfg, 1e-3).max_relative_error;
  const double mid = gradient_check(pi, ref, group, cfg, 1e-4).max_relative_error;
  const double fine = gradient_check(pi, ref, group, cfg, 1e-5).max_relative_error;
  // Truncation error dominates at 1e-3; rounding takes over near 1e-5.
  EXPECT_GT(coarse, mid);
  EXPECT_GT(coarse, fine);
}
