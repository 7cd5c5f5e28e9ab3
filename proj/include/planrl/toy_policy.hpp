#pragma once

// Tabular factorized softmax policy standing in for the planner backbone.
//
// Logits are indexed by (observation bucket, horizon position, joint action),
// where a joint action is (ActionType, slot) with slot in {none, 0..S-1}. A
// sampled plan stops after its first terminal action (Finish or Answer) or at
// the horizon. log pi(plan) is the sum of per-position log-softmax terms.
// A type-level variant sums over the slots of each action's type instead.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grounded_env.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace planrl {

struct JointAction {
  ActionType type = ActionType::Wait;
  std::optional<std::int64_t> slot;
  bool operator==(const JointAction&) const = default;
};

class ToyPolicy {
 public:
  ToyPolicy(std::size_t buckets, std::size_t horizon, std::size_t slots)
      : buckets_(buckets), horizon_(horizon), slots_(slots) {
    if (buckets == 0 || horizon == 0) throw std::invalid_argument("policy needs at least one bucket and position");
    params_.assign(buckets_ * horizon_ * joint_count(), 0.0);
  }

  std::size_t buckets() const { return buckets_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t slots() const { return slots_; }
  std::size_t joint_count() const { return kNumActionTypes * (slots_ + 1); }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::size_t offset(std::size_t bucket, std::size_t position) const {
    return (bucket * horizon_ + position) * joint_count();
  }
  std::span<const double> logits(std::size_t bucket, std::size_t position) const {
    return std::span<const double>(params_).subspan(offset(bucket, position), joint_count());
  }

  JointAction decode_joint(std::size_t a) const {
    const std::size_t per_type = slots_ + 1;
    JointAction j{kAllActionTypes[a / per_type], std::nullopt};
    if (a % per_type != 0) j.slot = static_cast<std::int64_t>(a % per_type - 1);
    return j;
  }
  std::size_t encode_joint(const JointAction& j) const {
    const std::size_t slot_code = j.slot ? static_cast<std::size_t>(*j.slot) + 1 : 0;
    if (slot_code > slots_) throw std::out_of_range("slot outside the policy's slot range");
    return index_of(j.type) * (slots_ + 1) + slot_code;
  }

  /// Observation bucket: hash of instruction and current observation.
  std::size_t bucket_of(const PlanningContext& ctx) const {
    std::uint64_t h = fnv1a64(ctx.instruction());
    h = fnv1a64("\n", h);
    h = fnv1a64(ctx.observation(), h);
    return static_cast<std::size_t>(h % buckets_);
  }

  /// log softmax(logits / temperature) at one position.
  std::vector<double> log_softmax(std::size_t bucket, std::size_t position, double temperature) const {
    const auto row = logits(bucket, position);
    std::vector<double> out(row.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < row.size(); ++a) {
      out[a] = row[a] / temperature;
      mx = std::max(mx, out[a]);
    }
    double z = 0.0;
    for (double v : out) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : out) v -= lse;
    return out;
  }

  std::vector<double> probabilities(std::size_t bucket, std::size_t position, double temperature) const {
    auto p = log_softmax(bucket, position, temperature);
    for (double& v : p) v = std::exp(v);
    return p;
  }

  /// log-probability of action `a` at one position. With `type_level` the
  /// slot is marginalized out: log sum_{b : type(b) = type(a)} p_b.
  double position_log_prob(std::size_t bucket, std::size_t position, std::size_t a, double temperature,
                           bool type_level) const {
    const auto lp = log_softmax(bucket, position, temperature);
    if (!type_level) return lp[a];
    const std::size_t per_type = slots_ + 1;
    const std::size_t first = (a / per_type) * per_type;
    double mx = lp[first];
    for (std::size_t b = first; b < first + per_type; ++b) mx = std::max(mx, lp[b]);
    double z = 0.0;
    for (std::size_t b = first; b < first + per_type; ++b) z += std::exp(lp[b] - mx);
    return mx + std::log(z);
  }

  /// d position_log_prob / d logits = (q - p) / temperature, where q is the
  /// one-hot of `a` (joint) or p restricted to a's type and renormalized.
  void accumulate_position_gradient(std::size_t bucket, std::size_t position, std::size_t a, double temperature,
                                    bool type_level, double scale, std::span<double> grad) const {
    const auto p = probabilities(bucket, position, temperature);
    const std::size_t base = offset(bucket, position);
    const double c = scale / temperature;
    for (std::size_t b = 0; b < p.size(); ++b) grad[base + b] -= c * p[b];
    if (!type_level) {
      grad[base + a] += c;
      return;
    }
    const std::size_t per_type = slots_ + 1;
    const std::size_t first = (a / per_type) * per_type;
    double mass = 0.0;
    for (std::size_t b = first; b < first + per_type; ++b) mass += p[b];
    for (std::size_t b = first; b < first + per_type; ++b) grad[base + b] += c * p[b] / mass;
  }

  /// Sum of per-position log-probabilities of the first `scored` actions.
  double log_prob(std::size_t bucket, std::span<const std::size_t> actions, std::size_t scored,
                  double temperature, bool type_level = false) const {
    double lp = 0.0;
    for (std::size_t k = 0; k < std::min(scored, actions.size()); ++k)
      lp += position_log_prob(bucket, k, actions[k], temperature, type_level);
    return lp;
  }

  std::vector<std::size_t> sample(std::size_t bucket, double temperature, Rng& rng) const {
    std::vector<std::size_t> plan;
    for (std::size_t k = 0; k < horizon_; ++k) {
      const auto p = probabilities(bucket, k, temperature);
      const double u = rng.uniform();
      double acc = 0.0;
      std::size_t a = p.size() - 1;
      for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
          a = i;
          break;
        }
      }
      plan.push_back(a);
      if (is_terminal(decode_joint(a).type)) break;
    }
    return plan;
  }

  /// Highest-logit action per position, lowest index on ties.
  std::vector<std::size_t> argmax_plan(std::size_t bucket) const {
    std::vector<std::size_t> plan;
    for (std::size_t k = 0; k < horizon_; ++k) {
      const auto row = logits(bucket, k);
      const auto a = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      plan.push_back(a);
      if (is_terminal(decode_joint(a).type)) break;
    }
    return plan;
  }

  bool all_finite() const {
    return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const ToyPolicy&) const = default;

 private:
  std::size_t buckets_;
  std::size_t horizon_;
  std::size_t slots_;
  std::vector<double> params_;
};

/// Concrete action for a joint action in a task. Grounding slots resolve to
/// the widget centre; CallTool / Answer slots index the task's tool and
/// answer options. Other actions keep the slot but carry no coordinate.
inline Action materialize_action(const JointAction& j, const EnvTask& task) {
  Action a{j.type, {}, j.slot, {}, {}};
  switch (j.type) {
    case ActionType::CallTool:
      if (j.slot && static_cast<std::size_t>(*j.slot) < task.tool_options.size())
        a.args = task.tool_options[static_cast<std::size_t>(*j.slot)];
      else
        a.args = {{"tool", "none"}};
      break;
    case ActionType::Answer:
      a.answer_text = j.slot && static_cast<std::size_t>(*j.slot) < task.answer_options.size()
                          ? task.answer_options[static_cast<std::size_t>(*j.slot)]
                          : std::string();
      break;
    case ActionType::TypeText:
      a.args = {{"text", "sample text"}};
      break;
    default:
      if (is_grounding(j.type) && j.slot)
        if (const Widget* w = task.find_widget(*j.slot)) a.point = w->bbox.center();
      break;
  }
  return a;
}

/// Plan steps for sampled joint actions; step 0 carries the current
/// observation, later steps an anticipated-state marker.
inline std::vector<PlanStep> materialize_plan(const ToyPolicy& policy, std::span<const std::size_t> actions,
                                              const PlanningContext& ctx, const EnvTask& task) {
  std::vector<PlanStep> steps;
  steps.reserve(actions.size());
  for (std::size_t k = 0; k < actions.size(); ++k) {
    PlanStep s;
    s.screenshot_abstraction = k == 0 ? ctx.observation() : "anticipated state +" + std::to_string(k);
    s.action = materialize_action(policy.decode_joint(actions[k]), task);
    s.status = is_terminal(s.action.action_type) ? StepStatus::Done : StepStatus::InProgress;
    steps.push_back(std::move(s));
  }
  return steps;
}

/// Greedy planner backed by the policy.
inline Planner policy_planner(const ToyPolicy& policy) {
  return [&policy](const PlanRequest& req) -> std::optional<Trajectory> {
    const auto plan = policy.argmax_plan(policy.bucket_of(req.context));
    const std::size_t keep = std::min(plan.size(), req.horizon);
    return Trajectory::predicted(
        materialize_plan(policy, std::span<const std::size_t>(plan).first(keep), req.context, req.task));
  };
}

}  // namespace planrl
