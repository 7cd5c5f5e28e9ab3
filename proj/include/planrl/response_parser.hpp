#pragma once

// Parsing of raw planner output into structured steps, per-step format
// validation, the format reward and the inverse serializer.
//
// Wire format: free text containing `<think>...</think>` and
// `<answer>...</answer>`; the answer payload is a JSON array of step objects
//   {"screenshot_abstraction": str,
//    "action": {"action_type": str, "point": [x, y], "slot": int,
//               "args": {str: str}, "answer_text": str},
//    "status": "in_progress" | "done",
//    "step_instruction": str}

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "types.hpp"

namespace planrl {

using Json = nlohmann::json;

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

/// Content between the first `open` and the next `close` after it.
inline std::optional<std::string> extract_block(std::string_view text, std::string_view open,
                                                std::string_view close) {
  const auto start = text.find(open);
  if (start == std::string_view::npos) return std::nullopt;
  const auto body = start + open.size();
  const auto end = text.find(close, body);
  if (end == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(body, end - body));
}

}  // namespace detail

/// Case-insensitive, whitespace-trimmed lookup in the closed action enumeration.
inline std::optional<ActionType> parse_action_type(std::string_view name) {
  name = detail::trim(name);
  for (auto t : kAllActionTypes)
    if (detail::iequals(name, to_string(t))) return t;
  return std::nullopt;
}

inline std::optional<StepStatus> parse_status(std::string_view name) {
  name = detail::trim(name);
  if (detail::iequals(name, "in_progress")) return StepStatus::InProgress;
  if (detail::iequals(name, "done")) return StepStatus::Done;
  return std::nullopt;
}

struct StepCandidate {
  Json object;                    // the raw array element
  bool valid = false;             // result of validate_step(object)
  std::optional<PlanStep> step;   // decoded step, present iff valid
};

struct ParsedResponse {
  std::vector<StepCandidate> steps;
  std::optional<std::string> think_text;
  bool answer_block_present = false;
  std::string raw_text;

  std::size_t valid_count() const {
    return static_cast<std::size_t>(
        std::count_if(steps.begin(), steps.end(), [](const StepCandidate& c) { return c.valid; }));
  }
};

/// A step is valid iff it has a non-empty "screenshot_abstraction" string, an
/// "action" object whose "action_type" names a known type, and a "status"
/// naming a known status. Extra keys are ignored.
inline bool validate_step(const Json& candidate) {
  if (!candidate.is_object()) return false;
  const auto abstraction = candidate.find("screenshot_abstraction");
  if (abstraction == candidate.end() || !abstraction->is_string() ||
      abstraction->get_ref<const std::string&>().empty())
    return false;
  const auto action = candidate.find("action");
  if (action == candidate.end() || !action->is_object()) return false;
  const auto type = action->find("action_type");
  if (type == action->end() || !type->is_string() ||
      !parse_action_type(type->get_ref<const std::string&>()))
    return false;
  const auto status = candidate.find("status");
  return status != candidate.end() && status->is_string() &&
         parse_status(status->get_ref<const std::string&>()).has_value();
}

namespace detail {

// Optional action fields that are present but malformed are dropped.
inline Action decode_action(const Json& obj) {
  Action a;
  a.action_type = *parse_action_type(obj.at("action_type").get_ref<const std::string&>());
  if (auto p = obj.find("point"); p != obj.end() && p->is_array() && p->size() == 2 &&
                                  (*p)[0].is_number() && (*p)[1].is_number()) {
    const double x = (*p)[0].get<double>();
    const double y = (*p)[1].get<double>();
    if (x >= 0.0 && y >= 0.0) a.point = Point{x, y};
  }
  if (auto s = obj.find("slot"); s != obj.end() && s->is_number_integer() && s->get<std::int64_t>() >= 0)
    a.slot = s->get<std::int64_t>();
  if (auto args = obj.find("args"); args != obj.end() && args->is_object()) {
    for (const auto& [k, v] : args->items())
      if (v.is_string()) a.args.emplace(k, v.get<std::string>());
  }
  if (auto t = obj.find("answer_text"); t != obj.end() && t->is_string()) a.answer_text = t->get<std::string>();
  return a;
}

}  // namespace detail

/// Decodes a candidate that already passed validate_step.
inline PlanStep decode_step(const Json& candidate) {
  PlanStep step;
  step.screenshot_abstraction = candidate.at("screenshot_abstraction").get<std::string>();
  step.action = detail::decode_action(candidate.at("action"));
  step.status = *parse_status(candidate.at("status").get_ref<const std::string&>());
  if (auto g = candidate.find("step_instruction"); g != candidate.end() && g->is_string())
    step.step_instruction = g->get<std::string>();
  return step;
}

/// Total function: malformed input yields an empty step list.
inline ParsedResponse parse_response(std::string_view text) {
  ParsedResponse out;
  out.raw_text = std::string(text);
  out.think_text = detail::extract_block(text, "<think>", "</think>");
  const auto answer = detail::extract_block(text, "<answer>", "</answer>");
  out.answer_block_present = answer.has_value();
  if (!answer) return out;

  Json payload = Json::parse(*answer, nullptr, /*allow_exceptions=*/false);
  if (payload.is_discarded() || !payload.is_array()) return out;

  out.steps.reserve(payload.size());
  for (auto& element : payload) {
    StepCandidate c;
    c.valid = validate_step(element);
    if (c.valid) c.step = decode_step(element);
    c.object = std::move(element);
    out.steps.push_back(std::move(c));
  }
  return out;
}

/// Ratio of valid steps; 0 for an empty or unparseable response.
inline double format_reward(const ParsedResponse& parsed) {
  if (parsed.steps.empty()) return 0.0;
  return static_cast<double>(parsed.valid_count()) / static_cast<double>(parsed.steps.size());
}

/// Valid steps only, in order. Invalid steps still count in format_reward.
inline Trajectory to_trajectory(const ParsedResponse& parsed) {
  std::vector<PlanStep> steps;
  for (const auto& c : parsed.steps)
    if (c.valid) steps.push_back(*c.step);
  return Trajectory::predicted(std::move(steps), parsed.raw_text);
}

// ---- serialization ----

inline Json action_to_json(const Action& a) {
  Json j = Json::object();
  j["action_type"] = std::string(to_string(a.action_type));
  if (a.point) j["point"] = Json::array({a.point->x, a.point->y});
  if (a.slot) j["slot"] = *a.slot;
  if (!a.args.empty()) j["args"] = a.args;
  if (a.answer_text) j["answer_text"] = *a.answer_text;
  return j;
}

inline Json step_to_json(const PlanStep& s) {
  Json j = Json::object();
  j["screenshot_abstraction"] = s.screenshot_abstraction;
  j["action"] = action_to_json(s.action);
  j["status"] = std::string(to_string(s.status));
  if (s.step_instruction) j["step_instruction"] = *s.step_instruction;
  return j;
}

inline Json steps_to_json(const std::vector<PlanStep>& steps) {
  Json arr = Json::array();
  for (const auto& s : steps) arr.push_back(step_to_json(s));
  return arr;
}

/// Renders steps in the planner wire format.
inline std::string render_response(const std::vector<PlanStep>& steps, std::string_view think = "") {
  std::string out = "<think>";
  out += think;
  out += "</think><answer>";
  out += steps_to_json(steps).dump();
  out += "</answer>";
  return out;
}

/// Strict decoding of a reference step list (corpus records). Throws
/// std::invalid_argument on any invalid step.
inline Trajectory reference_from_json(const Json& steps) {
  if (!steps.is_array()) throw std::invalid_argument("reference steps must be a JSON array");
  std::vector<PlanStep> out;
  out.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!validate_step(steps[i]))
      throw std::invalid_argument("reference step " + std::to_string(i) + " is not a valid step");
    out.push_back(decode_step(steps[i]));
  }
  return Trajectory::reference(std::move(out));
}

}  // namespace planrl
