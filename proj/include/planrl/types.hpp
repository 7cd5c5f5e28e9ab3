#pragma once

// Shared data model: actions, plan steps, trajectories, planning contexts,
// reward parameters and reward decompositions.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace planrl {

enum class ActionType : std::uint8_t {
  Click,
  DoubleClick,
  TypeText,
  Scroll,
  Drag,
  Hotkey,
  Wait,
  Finish,
  CallTool,
  Answer,
};

inline constexpr std::size_t kNumActionTypes = 10;

inline constexpr std::array<ActionType, kNumActionTypes> kAllActionTypes = {
    ActionType::Click,  ActionType::DoubleClick, ActionType::TypeText, ActionType::Scroll,
    ActionType::Drag,   ActionType::Hotkey,      ActionType::Wait,     ActionType::Finish,
    ActionType::CallTool, ActionType::Answer,
};

// Wire names, indexed by the enum value.
inline constexpr std::array<std::string_view, kNumActionTypes> kActionTypeNames = {
    "click", "double_click", "type_text", "scroll", "drag",
    "hotkey", "wait", "finish", "call_tool", "answer",
};

constexpr std::string_view to_string(ActionType t) {
  return kActionTypeNames[static_cast<std::size_t>(t)];
}

constexpr std::size_t index_of(ActionType t) { return static_cast<std::size_t>(t); }

/// Grounding steps are scored by coordinate containment.
constexpr bool is_grounding(ActionType t) {
  return t == ActionType::Click || t == ActionType::DoubleClick || t == ActionType::Drag;
}

/// Tool-calling steps are scored by answer equality.
constexpr bool is_tool_calling(ActionType t) {
  return t == ActionType::CallTool || t == ActionType::Answer;
}

/// Actions that end an episode.
constexpr bool is_terminal(ActionType t) {
  return t == ActionType::Finish || t == ActionType::Answer;
}

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Action {
  ActionType action_type = ActionType::Wait;
  std::optional<Point> point;
  // Widget index for GUI steps; option index for tool steps.
  std::optional<std::int64_t> slot;
  std::map<std::string, std::string> args;
  std::optional<std::string> answer_text;

  bool operator==(const Action&) const = default;

  /// Empty string when the action satisfies the data-model invariants,
  /// otherwise a description of the first violation.
  std::string invariant_violation() const {
    if (point && (point->x < 0.0 || point->y < 0.0)) return "point coordinates must be non-negative";
    if (slot && *slot < 0) return "slot must be non-negative";
    if (is_grounding(action_type) && !point && !slot)
      return std::string(to_string(action_type)) + " requires a point or slot";
    if (action_type == ActionType::Answer && !answer_text) return "answer requires answer_text";
    if (action_type == ActionType::CallTool && !args.contains("tool"))
      return "call_tool requires a \"tool\" argument";
    return {};
  }

  bool satisfies_invariants() const { return invariant_violation().empty(); }

  /// Throws std::invalid_argument when the invariants do not hold.
  const Action& checked() const {
    if (auto v = invariant_violation(); !v.empty()) throw std::invalid_argument(v);
    return *this;
  }
};

enum class StepStatus : std::uint8_t { InProgress, Done };

constexpr std::string_view to_string(StepStatus s) {
  return s == StepStatus::Done ? "done" : "in_progress";
}

struct PlanStep {
  std::string screenshot_abstraction;
  Action action;
  StepStatus status = StepStatus::InProgress;
  std::optional<std::string> step_instruction;

  bool operator==(const PlanStep&) const = default;
};

enum class TrajectoryKind : std::uint8_t { Predicted, Reference };

struct Trajectory {
  std::vector<PlanStep> steps;
  TrajectoryKind kind = TrajectoryKind::Predicted;
  std::optional<std::string> raw_text;

  bool operator==(const Trajectory&) const = default;

  std::size_t size() const { return steps.size(); }
  bool empty() const { return steps.empty(); }

  std::vector<Action> actions() const {
    std::vector<Action> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.action);
    return out;
  }

  std::vector<ActionType> action_types() const {
    std::vector<ActionType> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.action.action_type);
    return out;
  }

  static Trajectory predicted(std::vector<PlanStep> steps, std::optional<std::string> raw = {}) {
    return Trajectory{std::move(steps), TrajectoryKind::Predicted, std::move(raw)};
  }

  /// Reference trajectories are non-empty, only the last step may be Done,
  /// and every action satisfies the action invariants.
  static Trajectory reference(std::vector<PlanStep> steps) {
    if (steps.empty()) throw std::invalid_argument("reference trajectory must be non-empty");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      steps[i].action.checked();
      if (steps[i].status == StepStatus::Done && i + 1 != steps.size())
        throw std::invalid_argument("only the final reference step may be done");
    }
    return Trajectory{std::move(steps), TrajectoryKind::Reference, std::nullopt};
  }
};

struct HistoryEntry {
  std::string abstraction;
  Action action;

  HistoryEntry(std::string abstraction_, Action action_)
      : abstraction(std::move(abstraction_)), action(std::move(action_)) {
    if (abstraction.empty()) throw std::invalid_argument("history abstraction must be non-empty");
  }
  bool operator==(const HistoryEntry&) const = default;
};

/// Conditioning tuple for the planner: instruction, current observation
/// abstraction and the K most recent (abstraction, action) pairs, oldest first.
class PlanningContext {
 public:
  PlanningContext(std::string instruction, std::string observation, std::vector<HistoryEntry> history,
                  std::size_t history_window)
      : instruction_(std::move(instruction)),
        observation_(std::move(observation)),
        history_(std::move(history)),
        history_window_(history_window) {
    if (history_window_ == 0) throw std::invalid_argument("history window must be positive");
    if (history_.size() > history_window_)
      throw std::invalid_argument("history longer than history window");
  }

  /// Keeps only the trailing `window` entries of `full_history`.
  static PlanningContext truncated(std::string instruction, std::string observation,
                                   const std::vector<HistoryEntry>& full_history, std::size_t window) {
    if (window == 0) throw std::invalid_argument("history window must be positive");
    const std::size_t first = full_history.size() > window ? full_history.size() - window : 0;
    std::vector<HistoryEntry> tail(full_history.begin() + static_cast<std::ptrdiff_t>(first),
                                   full_history.end());
    return PlanningContext(std::move(instruction), std::move(observation), std::move(tail), window);
  }

  const std::string& instruction() const { return instruction_; }
  const std::string& observation() const { return observation_; }
  const std::vector<HistoryEntry>& history() const { return history_; }
  std::size_t history_window() const { return history_window_; }

  bool operator==(const PlanningContext&) const = default;

 private:
  std::string instruction_;
  std::string observation_;
  std::vector<HistoryEntry> history_;
  std::size_t history_window_;
};

struct RewardParams {
  double gamma = 0.8;
  double lambda_align = 0.8;
  double lambda_rep = 0.1;
  double lambda_fmt = 0.1;
  double position_penalty_rate = 0.1;
  double accept_threshold = 0.5;
  double coverage_penalty = 0.15;
  double repetition_penalty = 0.1;

  bool operator==(const RewardParams&) const = default;

  const RewardParams& checked() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    if (lambda_align < 0.0 || lambda_rep < 0.0) throw std::invalid_argument("lambdas must be >= 0");
    if (lambda_fmt < 0.0 || lambda_fmt > 1.0) throw std::invalid_argument("lambda_fmt must lie in [0, 1]");
    if (position_penalty_rate < 0.0 || coverage_penalty < 0.0 || repetition_penalty < 0.0)
      throw std::invalid_argument("penalties must be >= 0");
    return *this;
  }
};

struct MatchedPair {
  std::size_t pred_index = 0;
  std::size_t ref_index = 0;
  bool operator==(const MatchedPair&) const = default;
};

struct RewardBreakdown {
  double format_reward = 0.0;
  double raw_alignment_score = 0.0;
  std::vector<MatchedPair> matched_pairs;
  std::size_t unmatched_pred = 0;
  std::size_t unmatched_ref = 0;
  std::size_t repetition_count = 0;
  double accuracy_reward = 0.0;
  double total_reward = 0.0;

  bool operator==(const RewardBreakdown&) const = default;
};

}  // namespace planrl
