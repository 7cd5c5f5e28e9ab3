#pragma once

// Synthetic GUI / tool-use environments, the simulated frozen tool agent, the
// grounded step reward and the plan-act execution loop.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "errors.hpp"
#include "response_parser.hpp"
#include "rng.hpp"
#include "tools.hpp"
#include "types.hpp"

namespace planrl {

inline constexpr int kCanvasSize = 1000;

/// Integer-pixel axis-aligned rectangle.
struct Rect {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  bool operator==(const Rect&) const = default;

  Point center() const { return {(x_min + x_max) / 2.0, (y_min + y_max) / 2.0}; }
  bool intersects(const Rect& o) const {
    return x_min <= o.x_max && o.x_min <= x_max && y_min <= o.y_max && o.y_min <= y_max;
  }
};

struct Widget {
  std::int64_t id = 0;
  Rect bbox;
  std::string label;
  ActionType required_action = ActionType::Click;
  bool operator==(const Widget&) const = default;
};

enum class TaskKind : std::uint8_t { Gui, ToolUse };

inline std::string_view to_string(TaskKind k) { return k == TaskKind::Gui ? "gui" : "tool_use"; }

struct EnvTask {
  std::string task_id;
  std::string instruction;
  std::vector<Widget> widgets;
  Trajectory reference;
  std::optional<std::string> expected_answer;
  TaskKind kind = TaskKind::Gui;
  // Candidate tool invocations and answers addressable by slot index.
  std::vector<ToolArgs> tool_options;
  std::vector<std::string> answer_options;
  std::map<std::string, std::string> lookup_table;

  bool operator==(const EnvTask&) const = default;

  const Widget* find_widget(std::int64_t id) const {
    for (const auto& w : widgets)
      if (w.id == id) return &w;
    return nullptr;
  }

  ToolRegistry tools() const { return ToolRegistry::builtin(lookup_table); }

  /// Throws std::invalid_argument when the task invariants fail.
  const EnvTask& checked() const {
    for (std::size_t a = 0; a < widgets.size(); ++a) {
      const auto& r = widgets[a].bbox;
      if (!(r.x_min < r.x_max && r.y_min < r.y_max)) throw std::invalid_argument("degenerate widget bbox");
      for (std::size_t b = a + 1; b < widgets.size(); ++b)
        if (r.intersects(widgets[b].bbox)) throw std::invalid_argument("widget bboxes overlap");
    }
    if (reference.empty()) throw std::invalid_argument("task reference is empty");
    for (const auto& s : reference.steps) {
      if (is_grounding(s.action.action_type) && (!s.action.slot || !find_widget(*s.action.slot)))
        throw std::invalid_argument("grounding reference step must target an existing widget");
    }
    if (kind == TaskKind::ToolUse && !expected_answer)
      throw std::invalid_argument("tool-use task requires an expected answer");
    return *this;
  }
};

struct EnvState {
  std::string task_ref;
  std::set<std::int64_t> completed_widgets;
  std::size_t step_count = 0;
  bool finished = false;
  std::optional<std::string> emitted_answer;
  std::optional<std::string> tool_result;

  bool operator==(const EnvState&) const = default;
};

inline EnvState initial_state(const EnvTask& task) { return EnvState{task.task_id, {}, 0, false, {}, {}}; }

/// Inclusive containment.
inline int coord_match(const Point& p, const Rect& r) {
  return (p.x >= r.x_min && p.x <= r.x_max && p.y >= r.y_min && p.y <= r.y_max) ? 1 : 0;
}

/// Trim, collapse internal whitespace runs to one space, lower-case.
inline std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : detail::trim(s)) {
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

inline int answer_match(std::string_view predicted, std::string_view expected) {
  return normalize_answer(predicted) == normalize_answer(expected) ? 1 : 0;
}

/// Deterministic textual rendering of a state.
inline std::string abstract_observation(const EnvState& state, const EnvTask& task) {
  std::string s = "step " + std::to_string(state.step_count) + "; widgets:";
  if (task.widgets.empty()) s += " none";
  for (std::size_t k = 0; k < task.widgets.size(); ++k) {
    const auto& w = task.widgets[k];
    s += k ? ", [" : " [";
    s += std::to_string(w.id) + "] " + w.label + " (" + std::string(to_string(w.required_action)) + "): ";
    s += state.completed_widgets.contains(w.id) ? "done" : "pending";
  }
  s += "; tool: " + state.tool_result.value_or("-");
  if (state.emitted_answer) s += "; answer: " + *state.emitted_answer;
  s += state.finished ? "; [FINISHED]" : "; running";
  return s;
}

/// Index of the first reference step not yet satisfied in `state`; the last
/// index once everything before the final step is satisfied.
inline std::size_t reference_position(const EnvState& state, const EnvTask& task) {
  const auto& steps = task.reference.steps;
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    const Action& a = steps[k].action;
    switch (a.action_type) {
      case ActionType::CallTool:
        if (!state.tool_result || *state.tool_result != task.tools().invoke(a.args)) return k;
        break;
      case ActionType::Answer:
      case ActionType::Finish:
        if (!state.finished) return k;
        break;
      default:
        if (a.slot && task.find_widget(*a.slot) && !state.completed_widgets.contains(*a.slot)) return k;
        break;
    }
  }
  return steps.empty() ? 0 : steps.size() - 1;
}

/// Coordinate the executor acts on: the explicit point, else the centre of
/// the widget named by the slot.
inline std::optional<Point> executed_point(const Action& a, const EnvTask& task) {
  if (a.point) return a.point;
  if (a.slot)
    if (const Widget* w = task.find_widget(*a.slot)) return w->bbox.center();
  return std::nullopt;
}

struct ExecOutcome {
  EnvState state;
  std::string observation;
  std::size_t reference_index = 0;      // reference position of the pre-state
  std::optional<Point> point;           // coordinate acted on, if any
  std::optional<std::string> emitted;   // tool result or answer text
};

namespace detail {

// Grounding actions hit whatever lies under their coordinate. Other widget
// actions (typing, scrolling) go to the next pending widget expecting them.
inline const Widget* target_widget(const Action& a, const EnvTask& task, const EnvState& state) {
  if (is_grounding(a.action_type)) {
    if (a.point) {
      for (const auto& w : task.widgets)
        if (coord_match(*a.point, w.bbox)) return &w;
      return nullptr;
    }
    return a.slot ? task.find_widget(*a.slot) : nullptr;
  }
  for (const auto& w : task.widgets)
    if (!state.completed_widgets.contains(w.id) && w.required_action == a.action_type) return &w;
  return nullptr;
}

}  // namespace detail

/// Deterministic transition of the simulated tool agent. Non-matching actions
/// are no-ops that still advance step_count.
inline ExecOutcome execute_step(const EnvState& state, const Action& action, const EnvTask& task,
                                const ToolRegistry& tools) {
  if (state.finished) throw EpisodeFinished();
  ExecOutcome out;
  out.reference_index = reference_position(state, task);
  out.state = state;
  EnvState& next = out.state;
  ++next.step_count;
  switch (action.action_type) {
    case ActionType::Finish:
      next.finished = true;
      break;
    case ActionType::Answer:
      next.emitted_answer = action.answer_text.value_or("");
      next.finished = true;
      out.emitted = next.emitted_answer;
      break;
    case ActionType::CallTool:
      next.tool_result = tools.invoke(action.args);
      out.emitted = next.tool_result;
      break;
    case ActionType::Wait:
      break;
    default: {
      out.point = executed_point(action, task);
      const Widget* w = detail::target_widget(action, task, state);
      if (w && w->required_action == action.action_type && !next.completed_widgets.contains(w->id))
        next.completed_widgets.insert(w->id);
      break;
    }
  }
  out.observation = abstract_observation(next, task);
  return out;
}

inline ExecOutcome execute_step(const EnvState& state, const Action& action, const EnvTask& task) {
  return execute_step(state, action, task, task.tools());
}

/// Binary grounded reward of an executed step against the reference step at
/// the pre-state's reference position:
///   grounding steps   -> coordinate containment in the reference widget bbox
///                        (0 when the reference step is not a grounding step)
///   tool-calling steps -> normalized equality of the emitted text with the
///                        expected answer
///   other steps       -> action-type equality with the reference step.
inline int grounded_reward(const PlanStep& step, const EnvTask& task, const ExecOutcome& outcome) {
  if (outcome.reference_index >= task.reference.size()) throw MissingGroundTruth(outcome.reference_index);
  const Action& ref = task.reference.steps[outcome.reference_index].action;
  const ActionType type = step.action.action_type;
  if (is_grounding(type)) {
    if (!is_grounding(ref.action_type) || !ref.slot || !outcome.point) return 0;
    const Widget* w = task.find_widget(*ref.slot);
    return w ? coord_match(*outcome.point, w->bbox) : 0;
  }
  if (is_tool_calling(type)) {
    if (!task.expected_answer || !outcome.emitted) return 0;
    return answer_match(*outcome.emitted, *task.expected_answer);
  }
  return type == ref.action_type ? 1 : 0;
}

/// State and history after executing the first `count` reference steps.
struct ReplayResult {
  EnvState state;
  std::vector<HistoryEntry> history;
};

inline ReplayResult replay_reference(const EnvTask& task, std::size_t count) {
  ReplayResult r{initial_state(task), {}};
  const ToolRegistry tools = task.tools();
  for (std::size_t k = 0; k < count && k < task.reference.size(); ++k) {
    const Action& a = task.reference.steps[k].action;
    r.history.emplace_back(abstract_observation(r.state, task), a);
    r.state = execute_step(r.state, a, task, tools).state;
  }
  return r;
}

inline bool task_success(const EnvState& state, const EnvTask& task) {
  if (!state.finished) return false;
  for (const auto& w : task.widgets)
    if (!state.completed_widgets.contains(w.id)) return false;
  if (task.expected_answer)
    return state.emitted_answer && answer_match(*state.emitted_answer, *task.expected_answer);
  return true;
}

// ---- plan-act loop ----

struct PlanRequest {
  const PlanningContext& context;
  const EnvTask& task;
  const EnvState& state;
  std::size_t horizon;
};

/// Returns a predicted trajectory, or nullopt / empty trajectory on failure.
using Planner = std::function<std::optional<Trajectory>(const PlanRequest&)>;

struct TraceIteration {
  PlanningContext context;
  Trajectory predicted;
  bool planner_failed = false;
  Action executed;
  std::size_t reference_index = 0;
  EnvState state;  // after execution
  std::string observation;
  int grounded_reward = 0;
};

struct EpisodeTrace {
  std::string task_id;
  std::vector<TraceIteration> iterations;
  EnvState final_state;
  bool success = false;
};

/// Replays the reference continuation from the current reference position.
inline Planner scripted_optimal_planner() {
  return [](const PlanRequest& req) -> std::optional<Trajectory> {
    const auto& ref = req.task.reference.steps;
    const std::size_t start = reference_position(req.state, req.task);
    std::vector<PlanStep> steps;
    for (std::size_t k = start; k < ref.size() && steps.size() < req.horizon; ++k) steps.push_back(ref[k]);
    if (!steps.empty()) steps.front().screenshot_abstraction = req.context.observation();
    return Trajectory::predicted(std::move(steps));
  };
}

inline Planner always_finish_planner() {
  return [](const PlanRequest& req) -> std::optional<Trajectory> {
    PlanStep s{req.context.observation(), Action{ActionType::Finish, {}, {}, {}, {}}, StepStatus::Done, {}};
    return Trajectory::predicted({s});
  };
}

/// Plans a horizon-length trajectory, executes only its first action, appends
/// (abstraction, action) to the history and re-plans, until the episode
/// finishes or max_steps actions have been executed. Planner failures execute
/// a Wait no-op.
inline EpisodeTrace plan_act_loop(const Planner& planner, const EnvTask& task, std::size_t max_steps,
                                  std::size_t horizon, std::size_t history_window) {
  if (max_steps == 0) throw std::invalid_argument("max_steps must be positive");
  if (horizon == 0) throw std::invalid_argument("horizon must be positive");
  EpisodeTrace trace;
  trace.task_id = task.task_id;
  const ToolRegistry tools = task.tools();
  EnvState state = initial_state(task);
  std::string observation = abstract_observation(state, task);
  std::vector<HistoryEntry> history;

  for (std::size_t k = 0; k < max_steps && !state.finished; ++k) {
    PlanningContext context =
        PlanningContext::truncated(task.instruction, observation, history, history_window);
    std::optional<Trajectory> plan;
    try {
      plan = planner(PlanRequest{context, task, state, horizon});
    } catch (const std::exception&) {
      plan.reset();
    }
    const bool failed = !plan || plan->empty();
    const Action action = failed ? Action{ActionType::Wait, {}, {}, {}, {}} : plan->steps.front().action;
    ExecOutcome outcome = execute_step(state, action, task, tools);
    const PlanStep executed_step{observation, action, StepStatus::InProgress, {}};
    const int reward = grounded_reward(executed_step, task, outcome);

    history.emplace_back(observation, action);
    trace.iterations.push_back(TraceIteration{std::move(context), failed ? Trajectory{} : std::move(*plan), failed,
                                              action, outcome.reference_index, outcome.state, outcome.observation,
                                              reward});
    state = std::move(outcome.state);
    observation = std::move(outcome.observation);
  }
  trace.final_state = state;
  trace.success = task_success(state, task);
  return trace;
}

// ---- task generation ----

struct TaskShape {
  double gui_fraction = 1.0;       // share of Gui tasks; the rest are ToolUse
  std::size_t min_widgets = 1;
  std::size_t max_widgets = 3;
  std::size_t tool_task_widgets = 0;
  std::size_t tool_options = 3;
};

namespace detail {

inline constexpr std::array<const char*, 12> kLabelWords = {"Save",   "Open",    "Search", "Name",
                                                            "Email",  "Submit",  "Cancel", "Settings",
                                                            "Menu",   "Profile", "Next",   "Back"};

inline const char* widget_noun(ActionType t) {
  switch (t) {
    case ActionType::Click: return "button";
    case ActionType::DoubleClick: return "icon";
    case ActionType::TypeText: return "field";
    case ActionType::Scroll: return "list";
    case ActionType::Drag: return "slider";
    default: return "control";
  }
}

inline const char* widget_verb(ActionType t) {
  switch (t) {
    case ActionType::Click: return "click";
    case ActionType::DoubleClick: return "double-click";
    case ActionType::TypeText: return "type into";
    case ActionType::Scroll: return "scroll";
    case ActionType::Drag: return "drag";
    default: return "use";
  }
}

inline constexpr std::array<ActionType, 5> kWidgetActions = {ActionType::Click, ActionType::DoubleClick,
                                                             ActionType::TypeText, ActionType::Scroll,
                                                             ActionType::Drag};

inline constexpr std::array<std::pair<const char*, const char*>, 8> kCapitals = {{{"France", "Paris"},
                                                                                  {"Japan", "Tokyo"},
                                                                                  {"Kenya", "Nairobi"},
                                                                                  {"Peru", "Lima"},
                                                                                  {"Canada", "Ottawa"},
                                                                                  {"Egypt", "Cairo"},
                                                                                  {"Norway", "Oslo"},
                                                                                  {"Chile", "Santiago"}}};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
}

// Widgets in distinct cells of a 4x4 grid, so bboxes are pairwise disjoint.
inline std::vector<Widget> place_widgets(std::size_t count, Rng& rng) {
  constexpr int kGrid = 4, kCell = kCanvasSize / kGrid;
  std::vector<int> cells(kGrid * kGrid);
  std::iota(cells.begin(), cells.end(), 0);
  shuffle(cells, rng);
  std::vector<std::size_t> words(kLabelWords.size());
  std::iota(words.begin(), words.end(), std::size_t{0});
  shuffle(words, rng);
  std::vector<Widget> out;
  for (std::size_t k = 0; k < count; ++k) {
    const int cx = (cells[k] % kGrid) * kCell, cy = (cells[k] / kGrid) * kCell;
    Widget w;
    w.id = static_cast<std::int64_t>(k);
    w.required_action = kWidgetActions[static_cast<std::size_t>(rng.uniform_int(0, kWidgetActions.size() - 1))];
    w.bbox.x_min = cx + static_cast<int>(rng.uniform_int(5, 60));
    w.bbox.y_min = cy + static_cast<int>(rng.uniform_int(5, 60));
    w.bbox.x_max = w.bbox.x_min + static_cast<int>(rng.uniform_int(40, kCell - 70));
    w.bbox.y_max = w.bbox.y_min + static_cast<int>(rng.uniform_int(20, kCell - 70));
    w.label = std::string(kLabelWords[words[k % words.size()]]) + " " + widget_noun(w.required_action);
    out.push_back(std::move(w));
  }
  return out;
}

inline Action widget_action(const Widget& w) {
  Action a{w.required_action, w.bbox.center(), w.id, {}, {}};
  if (w.required_action == ActionType::TypeText) a.args["text"] = "sample text";
  return a;
}

}  // namespace detail

/// Deterministic task corpus. Gui tasks: one correct interaction per widget
/// then Finish. ToolUse tasks: optional widget interactions, then CallTool on
/// the correct tool option and Answer with its result.
inline std::vector<EnvTask> generate_tasks(std::uint64_t seed, std::size_t count, const TaskShape& shape) {
  if (shape.min_widgets > shape.max_widgets) throw std::invalid_argument("min_widgets > max_widgets");
  if (shape.max_widgets > 16 || shape.tool_task_widgets > 16) throw std::invalid_argument("at most 16 widgets fit the canvas");
  if (shape.tool_options == 0) throw std::invalid_argument("tool_options must be positive");
  const auto n_gui = static_cast<std::size_t>(std::llround(static_cast<double>(count) * shape.gui_fraction));
  std::vector<EnvTask> tasks;
  tasks.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    Rng rng(derive_seed(seed, {t}));
    EnvTask task;
    char id[32];
    std::snprintf(id, sizeof id, "task-%04zu", t);
    task.task_id = id;
    task.kind = t < std::min(n_gui, count) ? TaskKind::Gui : TaskKind::ToolUse;
    const std::size_t n_widgets =
        task.kind == TaskKind::Gui
            ? static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(shape.min_widgets),
                                                       static_cast<std::int64_t>(shape.max_widgets)))
            : shape.tool_task_widgets;
    task.widgets = detail::place_widgets(n_widgets, rng);

    std::string instruction = task.task_id + ":";
    for (const auto& w : task.widgets) instruction += std::string(" ") + detail::widget_verb(w.required_action) + " the " + w.label + ";";

    std::size_t correct = 0;
    if (task.kind == TaskKind::ToolUse) {
      correct = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(shape.tool_options) - 1));
      if (rng.bernoulli(0.5)) {
        const std::int64_t a = rng.uniform_int(2, 60), b = rng.uniform_int(2, 60);
        const char ops[] = {'+', '-', '*', '/'};
        const std::size_t op = static_cast<std::size_t>(rng.uniform_int(0, 3));
        for (std::size_t k = 0; k < shape.tool_options; ++k) {
          const char o = ops[(op + (k + shape.tool_options - correct)) % 4];
          task.tool_options.push_back({{"tool", "calculator"},
                                       {"expr", std::to_string(a) + " " + o + " " + std::to_string(b + static_cast<std::int64_t>(k / 4))}});
        }
        instruction += " compute " + task.tool_options[correct].at("expr") + " and report the result";
      } else {
        std::vector<std::size_t> idx(detail::kCapitals.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        detail::shuffle(idx, rng);
        for (std::size_t k = 0; k < shape.tool_options; ++k) {
          const auto& [country, capital] = detail::kCapitals[idx[k % idx.size()]];
          task.lookup_table[country] = capital;
          task.tool_options.push_back({{"tool", "lookup"}, {"key", country}});
        }
        instruction += std::string(" find the capital of ") + task.tool_options[correct].at("key");
      }
      const ToolRegistry tools = task.tools();
      for (const auto& opt : task.tool_options) task.answer_options.push_back(tools.invoke(opt));
      task.expected_answer = task.answer_options[correct];
    } else {
      instruction += " then finish";
    }
    task.instruction = instruction;

    // Reference: replay each step to record the abstraction it starts from.
    std::vector<Action> actions;
    for (const auto& w : task.widgets) actions.push_back(detail::widget_action(w));
    if (task.kind == TaskKind::ToolUse) {
      actions.push_back(Action{ActionType::CallTool, {}, static_cast<std::int64_t>(correct), task.tool_options[correct], {}});
      actions.push_back(Action{ActionType::Answer, {}, static_cast<std::int64_t>(correct), {}, task.expected_answer});
    } else {
      actions.push_back(Action{ActionType::Finish, {}, {}, {}, {}});
    }
    std::vector<PlanStep> steps;
    EnvState state = initial_state(task);
    const ToolRegistry tools = task.tools();
    for (std::size_t k = 0; k < actions.size(); ++k) {
      PlanStep s;
      s.screenshot_abstraction = abstract_observation(state, task);
      s.action = actions[k];
      s.status = k + 1 == actions.size() ? StepStatus::Done : StepStatus::InProgress;
      if (k < task.widgets.size())
        s.step_instruction = std::string(detail::widget_verb(task.widgets[k].required_action)) + " the " + task.widgets[k].label;
      steps.push_back(std::move(s));
      state = execute_step(state, actions[k], task, tools).state;
    }
    task.reference = Trajectory::reference(std::move(steps));
    tasks.push_back(std::move(task).checked());
  }
  return tasks;
}

// ---- corpus and trace records ----

inline Json task_to_json(const EnvTask& t) {
  Json j = Json::object();
  j["task_id"] = t.task_id;
  j["instruction"] = t.instruction;
  j["kind"] = std::string(to_string(t.kind));
  Json widgets = Json::array();
  for (const auto& w : t.widgets)
    widgets.push_back({{"id", w.id},
                       {"bbox", {w.bbox.x_min, w.bbox.y_min, w.bbox.x_max, w.bbox.y_max}},
                       {"label", w.label},
                       {"required_action", std::string(to_string(w.required_action))}});
  j["widgets"] = std::move(widgets);
  j["reference"] = steps_to_json(t.reference.steps);
  if (t.expected_answer) j["expected_answer"] = *t.expected_answer;
  if (!t.tool_options.empty()) j["tool_options"] = t.tool_options;
  if (!t.answer_options.empty()) j["answer_options"] = t.answer_options;
  if (!t.lookup_table.empty()) j["lookup_table"] = t.lookup_table;
  return j;
}

/// Throws std::invalid_argument (or a json exception) on malformed records.
inline EnvTask task_from_json(const Json& j) {
  EnvTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.instruction = j.at("instruction").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "gui") t.kind = TaskKind::Gui;
  else if (kind == "tool_use") t.kind = TaskKind::ToolUse;
  else throw std::invalid_argument("unknown task kind " + kind);
  for (const auto& w : j.value("widgets", Json::array())) {
    Widget widget;
    widget.id = w.at("id").get<std::int64_t>();
    const auto& b = w.at("bbox");
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("bbox must have four integers");
    widget.bbox = Rect{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    widget.label = w.at("label").get<std::string>();
    const auto action = parse_action_type(w.at("required_action").get<std::string>());
    if (!action) throw std::invalid_argument("unknown required_action");
    widget.required_action = *action;
    t.widgets.push_back(std::move(widget));
  }
  t.reference = reference_from_json(j.at("reference"));
  if (j.contains("expected_answer")) t.expected_answer = j.at("expected_answer").get<std::string>();
  if (j.contains("tool_options")) t.tool_options = j.at("tool_options").get<std::vector<ToolArgs>>();
  if (j.contains("answer_options")) t.answer_options = j.at("answer_options").get<std::vector<std::string>>();
  if (j.contains("lookup_table")) t.lookup_table = j.at("lookup_table").get<std::map<std::string, std::string>>();
  return std::move(t).checked();
}

inline void write_corpus(std::ostream& out, const std::vector<EnvTask>& tasks) {
  for (const auto& t : tasks) out << task_to_json(t).dump() << '\n';
}

inline std::vector<EnvTask> read_corpus(std::istream& in) {
  std::vector<EnvTask> tasks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      tasks.push_back(task_from_json(Json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return tasks;
}

inline Json iteration_to_json(const std::string& task_id, std::size_t index, const TraceIteration& it) {
  return Json{{"task_id", task_id},
              {"iteration", index},
              {"reference_index", it.reference_index},
              {"history_length", it.context.history().size()},
              {"predicted", steps_to_json(it.predicted.steps)},
              {"planner_failed", it.planner_failed},
              {"executed", action_to_json(it.executed)},
              {"observation", it.observation},
              {"grounded_reward", it.grounded_reward},
              {"finished", it.state.finished}};
}

}  // namespace planrl
