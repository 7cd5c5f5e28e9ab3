#pragma once

// Experiment configuration: flat dotted keys ("reward.gamma = 0.8") read from
// a text file, then overridden by `key=value` pairs. Every key has a default;
// the resolved set is written back out in the same format, so a run can be
// replayed from its echo alone.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grounded_env.hpp"
#include "grpo.hpp"
#include "response_parser.hpp"

namespace planrl {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class PlannerKind : std::uint8_t { Policy, Scripted, AlwaysFinish };

struct ExperimentConfig {
  TrainConfig train;
  bool stage2 = true;
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  std::string corpus;  // empty: generate from the task settings below
  std::uint64_t task_seed = 0;
  std::size_t task_count = 10;
  TaskShape task_shape{0.7};

  std::size_t eval_max_steps = 12;
  std::size_t eval_horizon = 4;
  std::size_t eval_samples = 20;
  std::uint64_t eval_seed = 99;
  PlannerKind planner = PlannerKind::Policy;

  std::string ablate_axis = "horizon";
  std::vector<double> ablate_values = {1, 2, 4, 8, 12};
};

namespace detail {

inline std::string format_list(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += Json(xs[i]).dump();
  }
  return s;
}

inline std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.emplace_back(trim(cur));
  return out;
}

template <class T>
T parse_number(const std::string& key, std::string_view v) {
  v = trim(v);
  T x{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || ptr != end || v.empty())
    throw ConfigError("config key " + key + ": cannot parse \"" + std::string(v) + "\"");
  return x;
}

inline bool parse_bool(const std::string& key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false");
}

struct ConfigKey {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, std::string_view)> set;
};

template <class F>
ConfigKey real(F field) {
  return {[field](const ExperimentConfig& c) { return Json(field(c)).dump(); },
          [field](ExperimentConfig& c, const std::string& k, std::string_view v) {
            field(c) = parse_number<double>(k, v);
          }};
}

template <class F>
ConfigKey count(F field) {
  return {[field](const ExperimentConfig& c) { return std::to_string(field(c)); },
          [field](ExperimentConfig& c, const std::string& k, std::string_view v) {
            using T = std::remove_cvref_t<decltype(field(c))>;
            field(c) = parse_number<T>(k, v);
          }};
}

inline const std::map<std::string, ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  static const std::map<std::string, ConfigKey> keys = {
      {"reward.gamma", real([](auto& c) -> auto& { return c.train.reward_params.gamma; })},
      {"reward.lambda_align", real([](auto& c) -> auto& { return c.train.reward_params.lambda_align; })},
      {"reward.lambda_rep", real([](auto& c) -> auto& { return c.train.reward_params.lambda_rep; })},
      {"reward.lambda_format", real([](auto& c) -> auto& { return c.train.reward_params.lambda_fmt; })},
      {"reward.position_penalty", real([](auto& c) -> auto& { return c.train.reward_params.position_penalty_rate; })},
      {"reward.match_threshold", real([](auto& c) -> auto& { return c.train.reward_params.accept_threshold; })},
      {"reward.coverage_penalty", real([](auto& c) -> auto& { return c.train.reward_params.coverage_penalty; })},
      {"reward.repetition_penalty", real([](auto& c) -> auto& { return c.train.reward_params.repetition_penalty; })},
      {"actor.lr", real([](auto& c) -> auto& { return c.train.learning_rate; })},
      {"actor.max_grad_norm", real([](auto& c) -> auto& { return c.train.max_grad_norm; })},
      {"actor.steps", count([](auto& c) -> auto& { return c.train.steps; })},
      {"actor.batch_size", count([](auto& c) -> auto& { return c.train.batch_size; })},
      {"rollout.n", count([](auto& c) -> auto& { return c.train.n_rollouts; })},
      {"rollout.temperature", real([](auto& c) -> auto& { return c.train.rollout_temperature; })},
      {"rollout.horizon", count([](auto& c) -> auto& { return c.train.horizon; })},
      {"rollout.fault_rate", real([](auto& c) -> auto& { return c.train.fault_rate; })},
      {"kl.coef", real([](auto& c) -> auto& { return c.train.kl_coef; })},
      {"kl.target", real([](auto& c) -> auto& { return c.train.kl_target; })},
      {"clip.low", real([](auto& c) -> auto& { return c.train.clip_low; })},
      {"clip.high", real([](auto& c) -> auto& { return c.train.clip_high; })},
      {"clip.dual", real([](auto& c) -> auto& { return c.train.clip_dual; })},
      {"policy.buckets", count([](auto& c) -> auto& { return c.train.policy_buckets; })},
      {"policy.slots", count([](auto& c) -> auto& { return c.train.policy_slots; })},
      {"policy.objective",
       {[](const C& c) -> std::string {
          return c.train.objective == PolicyObjective::Clipped ? "clipped" : "reinforce";
        },
        [](C& c, const std::string& k, std::string_view v) {
          v = trim(v);
          if (v == "clipped") c.train.objective = PolicyObjective::Clipped;
          else if (v == "reinforce") c.train.objective = PolicyObjective::Reinforce;
          else throw ConfigError("config key " + k + ": expected clipped or reinforce");
        }}},
      {"context.history_window", count([](auto& c) -> auto& { return c.train.history_window; })},
      {"train.stage2",
       {[](const C& c) -> std::string { return c.stage2 ? "true" : "false"; },
        [](C& c, const std::string& k, std::string_view v) { c.stage2 = parse_bool(k, v); }}},
      {"run.seeds",
       {[](const C& c) {
          std::string s;
          for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
          return s;
        },
        [](C& c, const std::string& k, std::string_view v) {
          c.seeds.clear();
          for (const auto& item : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>(k, item));
          if (c.seeds.empty()) throw ConfigError("config key " + k + ": at least one seed is required");
        }}},
      {"tasks.corpus",
       {[](const C& c) { return c.corpus; },
        [](C& c, const std::string&, std::string_view v) { c.corpus = std::string(trim(v)); }}},
      {"tasks.seed", count([](auto& c) -> auto& { return c.task_seed; })},
      {"tasks.count", count([](auto& c) -> auto& { return c.task_count; })},
      {"tasks.gui_fraction", real([](auto& c) -> auto& { return c.task_shape.gui_fraction; })},
      {"tasks.min_widgets", count([](auto& c) -> auto& { return c.task_shape.min_widgets; })},
      {"tasks.max_widgets", count([](auto& c) -> auto& { return c.task_shape.max_widgets; })},
      {"tasks.tool_task_widgets", count([](auto& c) -> auto& { return c.task_shape.tool_task_widgets; })},
      {"tasks.tool_options", count([](auto& c) -> auto& { return c.task_shape.tool_options; })},
      {"eval.max_steps", count([](auto& c) -> auto& { return c.eval_max_steps; })},
      {"eval.horizon", count([](auto& c) -> auto& { return c.eval_horizon; })},
      {"eval.samples", count([](auto& c) -> auto& { return c.eval_samples; })},
      {"eval.seed", count([](auto& c) -> auto& { return c.eval_seed; })},
      {"eval.planner",
       {[](const C& c) -> std::string {
          switch (c.planner) {
            case PlannerKind::Scripted: return "scripted";
            case PlannerKind::AlwaysFinish: return "always-finish";
            default: return "policy";
          }
        },
        [](C& c, const std::string& k, std::string_view v) {
          v = trim(v);
          if (v == "policy") c.planner = PlannerKind::Policy;
          else if (v == "scripted") c.planner = PlannerKind::Scripted;
          else if (v == "always-finish") c.planner = PlannerKind::AlwaysFinish;
          else throw ConfigError("config key " + k + ": expected policy, scripted or always-finish");
        }}},
      {"ablate.axis",
       {[](const C& c) { return c.ablate_axis; },
        [](C& c, const std::string&, std::string_view v) { c.ablate_axis = std::string(trim(v)); }}},
      {"ablate.values",
       {[](const C& c) { return format_list(c.ablate_values); },
        [](C& c, const std::string& k, std::string_view v) {
          c.ablate_values.clear();
          for (const auto& item : split_list(v)) c.ablate_values.push_back(parse_number<double>(k, item));
        }}},
  };
  return keys;
}

}  // namespace detail

inline void set_config_value(ExperimentConfig& cfg, const std::string& key, std::string_view value) {
  const auto& keys = detail::config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown config key: " + key);
  it->second.set(cfg, key, value);
}

/// Applies one "key=value" override.
inline void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override must look like key=value: " + std::string(assignment));
  set_config_value(cfg, std::string(detail::trim(assignment.substr(0, eq))), assignment.substr(eq + 1));
}

/// Reads "key = value" lines; '#' starts a comment, blank lines are skipped.
inline void read_config(std::istream& in, ExperimentConfig& cfg) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    try {
      apply_override(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void validate(const ExperimentConfig& cfg) {
  cfg.train.reward_params.checked();
  const auto& t = cfg.train;
  if (t.n_rollouts < 2) throw ConfigError("rollout.n must be at least 2");
  if (!(t.rollout_temperature > 0.0)) throw ConfigError("rollout.temperature must be positive");
  if (t.horizon == 0 || cfg.eval_horizon == 0) throw ConfigError("horizons must be positive");
  if (t.history_window == 0) throw ConfigError("context.history_window must be positive");
  if (t.policy_buckets == 0) throw ConfigError("policy.buckets must be positive");
  if (t.fault_rate < 0.0 || t.fault_rate > 1.0) throw ConfigError("rollout.fault_rate must lie in [0, 1]");
  if (t.clip_low < 0.0 || t.clip_low >= 1.0 || t.clip_high < 0.0 || t.clip_dual <= 1.0)
    throw ConfigError("clip ratios out of range");
  if (cfg.task_shape.min_widgets > cfg.task_shape.max_widgets)
    throw ConfigError("tasks.min_widgets exceeds tasks.max_widgets");
  if (cfg.task_shape.gui_fraction < 0.0 || cfg.task_shape.gui_fraction > 1.0)
    throw ConfigError("tasks.gui_fraction must lie in [0, 1]");
  if (cfg.eval_max_steps == 0) throw ConfigError("eval.max_steps must be positive");
  if (cfg.seeds.empty()) throw ConfigError("run.seeds must not be empty");
}

/// Resolved configuration in the input format, keys sorted.
inline void write_config(std::ostream& out, const ExperimentConfig& cfg) {
  for (const auto& [key, k] : detail::config_keys()) out << key << " = " << k.get(cfg) << '\n';
}

inline std::string config_to_string(const ExperimentConfig& cfg) {
  std::ostringstream os;
  write_config(os, cfg);
  return os.str();
}

}  // namespace planrl
