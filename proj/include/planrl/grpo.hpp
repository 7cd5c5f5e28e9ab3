#pragma once

// Group-relative policy optimization over the toy policy: rollout groups,
// group-normalized advantages, the clipped surrogate with dual-clip floor,
// the low-variance KL penalty and their analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "toy_policy.hpp"
#include "types.hpp"

namespace planrl {

enum class TrainStage : std::uint8_t { One = 1, Two = 2 };

enum class PolicyObjective : std::uint8_t {
  Clipped,    // asymmetric clipped surrogate with dual-clip floor
  Reinforce,  // plain A * log pi
};

struct TrainConfig {
  RewardParams reward_params;
  std::size_t n_rollouts = 5;
  double rollout_temperature = 1.0;
  double learning_rate = 1.0;
  double clip_low = 0.2;
  double clip_high = 0.3;
  double clip_dual = 3.0;
  double kl_coef = 0.01;
  double kl_target = 0.1;  // recorded only; the coefficient is fixed
  double max_grad_norm = 1.0;  // 0 disables clipping
  PolicyObjective objective = PolicyObjective::Clipped;
  std::size_t batch_size = 16;
  std::size_t steps = 300;
  std::uint64_t seed = 0;
  std::size_t horizon = 4;
  std::size_t history_window = 4;
  TrainStage stage = TrainStage::One;
  double fault_rate = 0.0;  // probability of dropping a required key when serializing
  std::size_t policy_buckets = 1024;
  std::size_t policy_slots = 4;
};

struct RolloutSample {
  std::vector<std::size_t> actions;  // joint action per horizon position
  std::size_t scored_length = 0;     // positions that enter log pi
  bool type_level = false;           // score action types, slots marginalized
  double log_prob_old = 0.0;
  double log_prob_ref = 0.0;
  double log_prob_new = 0.0;
  double reward = 0.0;
  double advantage = 0.0;
  Trajectory predicted;
};

struct RolloutGroup {
  PlanningContext context;
  std::size_t bucket = 0;
  std::vector<RolloutSample> samples;
};

/// n independent plans from the temperature-scaled policy; deterministic in
/// (policy, context, n, temperature, seed). log_prob_old is recorded under
/// the sampling policy.
inline RolloutGroup sample_rollout_group(const ToyPolicy& policy, const PlanningContext& context, std::size_t n,
                                         double temperature, std::uint64_t seed) {
  if (n < 2) throw GroupTooSmall(n);
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  RolloutGroup group{context, policy.bucket_of(context), {}};
  Rng rng(seed);
  group.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RolloutSample s;
    s.actions = policy.sample(group.bucket, temperature, rng);
    s.scored_length = s.actions.size();
    s.log_prob_old = policy.log_prob(group.bucket, s.actions, s.scored_length, temperature);
    group.samples.push_back(std::move(s));
  }
  return group;
}

inline constexpr double kAdvantageEpsilon = 1e-6;

/// (r_i - mean) / (population std + 1e-6); all zeros when the std is 0.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw GroupTooSmall(rewards.size());
  std::vector<double> adv(rewards.size(), 0.0);
  // Checked directly: the rounded mean of equal values need not equal them.
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return adv;
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);
  if (std == 0.0) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (std + kAdvantageEpsilon);
  return adv;
}

inline void fill_advantages(RolloutGroup& group) {
  std::vector<double> rewards;
  for (const auto& s : group.samples) rewards.push_back(s.reward);
  const auto adv = group_advantages(rewards);
  for (std::size_t i = 0; i < adv.size(); ++i) group.samples[i].advantage = adv[i];
}

/// Per-sample clipped surrogate and d(surrogate)/d(log pi_new).
struct SurrogateTerm {
  double value = 0.0;
  double dlogp = 0.0;
};

inline SurrogateTerm clipped_surrogate(double log_ratio, double advantage, const TrainConfig& cfg) {
  if (cfg.objective == PolicyObjective::Reinforce) return {0.0, advantage};  // value filled by caller
  const double ratio = std::exp(log_ratio);
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - cfg.clip_low, 1.0 + cfg.clip_high) * advantage;
  SurrogateTerm t;
  if (unclipped <= clipped) t = {unclipped, unclipped};  // d(r A)/d log r = r A
  else t = {clipped, 0.0};
  if (advantage < 0.0) {
    const double floor = -cfg.clip_dual * std::abs(advantage);
    if (t.value < floor) t = {floor, 0.0};
  }
  return t;
}

/// Low-variance KL estimator k(x) = e^x - x - 1 with x = log pi_ref - log pi_new.
inline double low_var_kl(double log_prob_ref, double log_prob_new) {
  const double x = log_prob_ref - log_prob_new;
  return std::exp(x) - x - 1.0;
}

struct LossAndGrad {
  double loss = 0.0;
  double mean_kl = 0.0;
  std::vector<double> gradient;
};

/// loss = -mean_i surrogate_i + kl_coef * mean_i k_i, with the gradient taken
/// analytically through the factorized log-softmax. Fills log_prob_new and
/// log_prob_ref in `group`.
inline LossAndGrad grpo_loss_and_grad(RolloutGroup& group, const ToyPolicy& policy, const ToyPolicy& ref_policy,
                                      const TrainConfig& cfg) {
  const double tau = cfg.rollout_temperature;
  LossAndGrad out;
  out.gradient.assign(policy.parameter_count(), 0.0);
  if (group.samples.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(group.samples.size());

  for (auto& s : group.samples) {
    s.log_prob_new = policy.log_prob(group.bucket, s.actions, s.scored_length, tau, s.type_level);
    s.log_prob_ref = ref_policy.log_prob(group.bucket, s.actions, s.scored_length, tau, s.type_level);
    SurrogateTerm sur = clipped_surrogate(s.log_prob_new - s.log_prob_old, s.advantage, cfg);
    if (cfg.objective == PolicyObjective::Reinforce) sur.value = s.advantage * s.log_prob_new;
    const double kl = low_var_kl(s.log_prob_ref, s.log_prob_new);
    out.loss += -inv_n * sur.value + cfg.kl_coef * inv_n * kl;
    out.mean_kl += inv_n * kl;

    // d loss / d log pi_new for this sample.
    const double dkl = 1.0 - std::exp(s.log_prob_ref - s.log_prob_new);
    const double coeff = -inv_n * sur.dlogp + cfg.kl_coef * inv_n * dkl;
    if (coeff == 0.0) continue;
    const std::size_t scored = std::min(s.scored_length, s.actions.size());
    for (std::size_t k = 0; k < scored; ++k)
      policy.accumulate_position_gradient(group.bucket, k, s.actions[k], tau, s.type_level, coeff, out.gradient);
  }
  return out;
}

inline constexpr std::size_t kGradientCheckMaxParameters = 10000;

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

/// Relative error with a 1e-6 floor on the denominator, so coordinates where
/// both gradients vanish compare as equal.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Central finite differences against the analytic gradient on every
/// coordinate. The reference policy stays fixed at `ref_policy`.
inline GradientCheckResult gradient_check(const ToyPolicy& policy, const ToyPolicy& ref_policy, RolloutGroup group,
                                          const TrainConfig& cfg, double step = 1e-5) {
  if (policy.parameter_count() > kGradientCheckMaxParameters)
    throw SizeLimitExceeded("gradient check is limited to " + std::to_string(kGradientCheckMaxParameters) +
                            " parameters");
  const auto analytic = grpo_loss_and_grad(group, policy, ref_policy, cfg).gradient;
  ToyPolicy probe = policy;
  GradientCheckResult result;
  for (std::size_t k = 0; k < probe.parameter_count(); ++k) {
    const double saved = probe.parameters()[k];
    probe.parameters()[k] = saved + step;
    const double up = grpo_loss_and_grad(group, probe, ref_policy, cfg).loss;
    probe.parameters()[k] = saved - step;
    const double down = grpo_loss_and_grad(group, probe, ref_policy, cfg).loss;
    probe.parameters()[k] = saved;
    const double err = relative_error(analytic[k], (up - down) / (2.0 * step));
    if (err > result.max_relative_error) result = {err, k};
  }
  return result;
}

inline GradientCheckResult gradient_check(const ToyPolicy& policy, const RolloutGroup& group, const TrainConfig& cfg) {
  return gradient_check(policy, policy, group, cfg);
}

}  // namespace planrl
