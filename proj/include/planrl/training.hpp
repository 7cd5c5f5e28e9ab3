#pragma once

// Two-stage training drivers. Stage 1 scores each sampled plan against the
// reference continuation with the trajectory-level reward; Stage 2 executes
// only the first planned action in the environment and uses the grounded step
// reward. Both share the GRPO update.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "grounded_env.hpp"
#include "grpo.hpp"
#include "response_parser.hpp"
#include "reward_engine.hpp"
#include "rng.hpp"
#include "toy_policy.hpp"

namespace planrl {

/// One (task, reference position) pair: the context at that step, the
/// reference continuation truncated to the horizon, and the environment
/// state reached by replaying the reference prefix.
struct TrainingInstance {
  std::size_t task_index = 0;
  std::size_t position = 0;
  PlanningContext context;
  Trajectory continuation;
  EnvState state;
};

inline std::vector<TrainingInstance> build_instances(const std::vector<EnvTask>& tasks, std::size_t horizon,
                                                     std::size_t history_window) {
  std::vector<TrainingInstance> out;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const auto& task = tasks[ti];
    const auto& steps = task.reference.steps;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      auto replay = replay_reference(task, t);
      auto ctx = PlanningContext::truncated(task.instruction, abstract_observation(replay.state, task),
                                            replay.history, history_window);
      const std::size_t end = std::min(steps.size(), t + horizon);
      std::vector<PlanStep> cont(steps.begin() + static_cast<std::ptrdiff_t>(t),
                                 steps.begin() + static_cast<std::ptrdiff_t>(end));
      out.push_back(TrainingInstance{ti, t, std::move(ctx), Trajectory::reference(std::move(cont)),
                                     std::move(replay.state)});
    }
  }
  return out;
}

/// Wire-format rendering with optional fault injection: each step loses one
/// required key with probability `fault_rate`.
inline std::string render_with_faults(const std::vector<PlanStep>& steps, double fault_rate, Rng& rng) {
  static constexpr const char* kRequired[] = {"screenshot_abstraction", "action", "status"};
  Json arr = Json::array();
  for (const auto& s : steps) {
    Json j = step_to_json(s);
    if (fault_rate > 0.0 && rng.bernoulli(fault_rate)) j.erase(kRequired[rng.uniform_int(0, 2)]);
    arr.push_back(std::move(j));
  }
  return "<think>plan</think><answer>" + arr.dump() + "</answer>";
}

struct SampleScore {
  double total = 0.0;
  double accuracy = 0.0;
  double format = 0.0;
  std::size_t repetitions = 0;
  std::optional<int> grounded;
};

/// Scores one rendered plan for the given stage.
inline SampleScore score_plan(const std::string& text, const TrainingInstance& inst, const EnvTask& task,
                              TrainStage stage, const RewardParams& params) {
  const ParsedResponse parsed = parse_response(text);
  const RewardBreakdown b = total_reward(parsed, inst.continuation, params);
  SampleScore s{b.total_reward, b.accuracy_reward, b.format_reward, b.repetition_count, std::nullopt};
  if (stage == TrainStage::Two) {
    int g = 0;
    if (!parsed.steps.empty() && parsed.steps.front().valid) {
      const PlanStep& first = *parsed.steps.front().step;
      const ExecOutcome outcome = execute_step(inst.state, first.action, task);
      g = grounded_reward(first, task, outcome);
    }
    s.grounded = g;
    s.total = (1.0 - params.lambda_fmt) * static_cast<double>(g) + params.lambda_fmt * b.format_reward;
  }
  return s;
}

struct StepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double mean_acc = 0.0;
  double mean_fmt = 0.0;
  double repetition_rate = 0.0;
  std::optional<double> grounded_hit_rate;
  double kl = 0.0;
  double grad_norm = 0.0;
  double wallclock_ms = 0.0;
};

/// Deterministic fields only; wallclock_ms is written separately.
inline std::string metrics_to_line(const StepMetrics& m) {
  std::string s = "{\"step\":" + std::to_string(m.step);
  s += ",\"mean_reward\":" + format_real(m.mean_reward);
  s += ",\"mean_acc\":" + format_real(m.mean_acc);
  s += ",\"mean_fmt\":" + format_real(m.mean_fmt);
  s += ",\"repetition_rate\":" + format_real(m.repetition_rate);
  s += ",\"grounded_hit_rate\":" + (m.grounded_hit_rate ? format_real(*m.grounded_hit_rate) : std::string("null"));
  s += ",\"kl\":" + format_real(m.kl);
  s += ",\"grad_norm\":" + format_real(m.grad_norm);
  s += '}';
  return s;
}

inline ToyPolicy initial_policy(const TrainConfig& cfg) {
  return ToyPolicy(cfg.policy_buckets, cfg.horizon, cfg.policy_slots);
}

struct TrainResult {
  ToyPolicy policy;
  std::vector<StepMetrics> metrics;
};

using MetricsSink = std::function<void(const StepMetrics&)>;

/// GRPO loop shared by both stages. Instances are drawn with replacement from
/// a per-step stream; each group has its own seed derived from
/// (seed, stage, step, group), and group gradients are summed in group order.
/// The reference policy for the KL term is the policy at entry.
inline TrainResult train_stage(const std::vector<EnvTask>& tasks, ToyPolicy policy, const TrainConfig& cfg,
                               const MetricsSink& sink = {}) {
  if (tasks.empty()) throw std::invalid_argument("training needs at least one task");
  cfg.reward_params.checked();
  const ToyPolicy ref_policy = policy;
  const auto instances = build_instances(tasks, policy.horizon(), cfg.history_window);
  const auto stage_id = static_cast<std::uint64_t>(cfg.stage);
  TrainResult result{std::move(policy), {}};
  ToyPolicy& pi = result.policy;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng pick(derive_seed(cfg.seed, {stage_id, step, 0xFFFFFFFFull}));
    std::vector<double> grad(pi.parameter_count(), 0.0);
    StepMetrics m;
    m.step = step;
    std::size_t n_samples = 0, n_repeating = 0, grounded_hits = 0;

    for (std::size_t g = 0; g < cfg.batch_size; ++g) {
      const auto& inst = instances[static_cast<std::size_t>(
          pick.uniform_int(0, static_cast<std::int64_t>(instances.size()) - 1))];
      const auto& task = tasks[inst.task_index];
      const std::uint64_t group_seed = derive_seed(cfg.seed, {stage_id, step, g});
      RolloutGroup group = sample_rollout_group(pi, inst.context, cfg.n_rollouts, cfg.rollout_temperature, group_seed);
      Rng faults(derive_seed(group_seed, {1}));
      for (auto& s : group.samples) {
        s.predicted = Trajectory::predicted(materialize_plan(pi, s.actions, inst.context, task));
        const std::string text = render_with_faults(s.predicted.steps, cfg.fault_rate, faults);
        const SampleScore score = score_plan(text, inst, task, cfg.stage, cfg.reward_params);
        s.reward = score.total;
        if (cfg.stage == TrainStage::Two) {
          s.scored_length = std::min<std::size_t>(1, s.actions.size());
        } else {
          s.type_level = true;
        }
        s.log_prob_old = pi.log_prob(group.bucket, s.actions, s.scored_length, cfg.rollout_temperature, s.type_level);
        m.mean_reward += score.total;
        m.mean_acc += score.accuracy;
        m.mean_fmt += score.format;
        n_repeating += score.repetitions > 0 ? 1 : 0;
        grounded_hits += score.grounded.value_or(0);
        ++n_samples;
      }
      fill_advantages(group);
      const LossAndGrad lg = grpo_loss_and_grad(group, pi, ref_policy, cfg);
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += lg.gradient[k];
      m.kl += lg.mean_kl;
    }

    double norm2 = 0.0;
    for (double v : grad) norm2 += v * v;
    m.grad_norm = std::sqrt(norm2);
    double scale = cfg.learning_rate;
    if (cfg.max_grad_norm > 0.0 && m.grad_norm > cfg.max_grad_norm) scale *= cfg.max_grad_norm / m.grad_norm;
    auto params = pi.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= scale * grad[k];

    const double ns = static_cast<double>(n_samples);
    m.mean_reward /= ns;
    m.mean_acc /= ns;
    m.mean_fmt /= ns;
    m.repetition_rate = static_cast<double>(n_repeating) / ns;
    if (cfg.stage == TrainStage::Two) m.grounded_hit_rate = static_cast<double>(grounded_hits) / ns;
    m.kl /= static_cast<double>(cfg.batch_size);
    m.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (sink) sink(m);
    result.metrics.push_back(m);
  }
  return result;
}

inline TrainResult train_stage1(const std::vector<EnvTask>& tasks, TrainConfig cfg, const MetricsSink& sink = {}) {
  cfg.stage = TrainStage::One;
  return train_stage(tasks, initial_policy(cfg), cfg, sink);
}

inline TrainResult train_stage2(const std::vector<EnvTask>& tasks, ToyPolicy policy, TrainConfig cfg,
                                const MetricsSink& sink = {}) {
  cfg.stage = TrainStage::Two;
  return train_stage(tasks, std::move(policy), cfg, sink);
}

// ---- policy evaluation ----

struct PolicyRewardStats {
  double mean_reward = 0.0;
  double mean_acc = 0.0;
  double mean_fmt = 0.0;
  double repetition_rate = 0.0;
  double grounded_hit_rate = 0.0;
};

/// Expected-reward estimate: `samples` rollouts per training instance at the
/// rollout temperature, scored for the given stage.
inline PolicyRewardStats evaluate_policy_rewards(const ToyPolicy& policy, const std::vector<EnvTask>& tasks,
                                                 const TrainConfig& cfg, TrainStage stage, std::size_t samples,
                                                 std::uint64_t seed) {
  PolicyRewardStats st;
  const auto instances = build_instances(tasks, policy.horizon(), cfg.history_window);
  std::size_t n = 0, repeating = 0, hits = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const auto& task = tasks[inst.task_index];
    Rng rng(derive_seed(seed, {i}));
    const std::size_t bucket = policy.bucket_of(inst.context);
    for (std::size_t k = 0; k < samples; ++k) {
      const auto actions = policy.sample(bucket, cfg.rollout_temperature, rng);
      const auto steps = materialize_plan(policy, actions, inst.context, task);
      const SampleScore s = score_plan(render_response(steps, "plan"), inst, task, stage, cfg.reward_params);
      st.mean_reward += s.total;
      st.mean_acc += s.accuracy;
      st.mean_fmt += s.format;
      repeating += s.repetitions > 0 ? 1 : 0;
      hits += s.grounded.value_or(0);
      ++n;
    }
  }
  if (n == 0) return st;
  const double dn = static_cast<double>(n);
  st.mean_reward /= dn;
  st.mean_acc /= dn;
  st.mean_fmt /= dn;
  st.repetition_rate = static_cast<double>(repeating) / dn;
  st.grounded_hit_rate = static_cast<double>(hits) / dn;
  return st;
}

struct PlanActReport {
  double success_rate = 0.0;
  double mean_episode_length = 0.0;
  double grounded_accuracy = 0.0;
  std::vector<EpisodeTrace> traces;
};

inline PlanActReport evaluate_plan_act(const Planner& planner, const std::vector<EnvTask>& tasks,
                                       std::size_t max_steps, std::size_t horizon, std::size_t history_window) {
  PlanActReport r;
  std::size_t successes = 0, steps = 0, hits = 0;
  for (const auto& task : tasks) {
    EpisodeTrace trace = plan_act_loop(planner, task, max_steps, horizon, history_window);
    successes += trace.success ? 1 : 0;
    steps += trace.iterations.size();
    for (const auto& it : trace.iterations) hits += static_cast<std::size_t>(it.grounded_reward);
    r.traces.push_back(std::move(trace));
  }
  if (!tasks.empty()) {
    r.success_rate = static_cast<double>(successes) / static_cast<double>(tasks.size());
    r.mean_episode_length = static_cast<double>(steps) / static_cast<double>(tasks.size());
  }
  if (steps) r.grounded_accuracy = static_cast<double>(hits) / static_cast<double>(steps);
  return r;
}

}  // namespace planrl
