#include <gtest/gtest.h>

#include <algorithm>

#include "planrl/response_parser.hpp"
#include "test_support.hpp"

using namespace planrl;
using planrl::testing::random_text;
using planrl::testing::step;

namespace {

Json good_step(std::string type = "click") {
  return Json{{"screenshot_abstraction", "home screen"},
              {"action", {{"action_type", type}, {"point", {10, 20}}}},
              {"status", "in_progress"}};
}

std::string wrap(const Json& arr) { return "<think>plan</think><answer>" + arr.dump() + "</answer>"; }

}  // namespace

TEST(ParseResponse, SingleValidStep) {
  const auto p = parse_response(
      R"(<think>plan</think><answer>[{"screenshot_abstraction":"home screen","action":{"action_type":"click","point":[10,20]},"status":"in_progress"}]</answer>)");
  ASSERT_EQ(p.steps.size(), 1u);
  EXPECT_TRUE(p.steps[0].valid);
  EXPECT_TRUE(p.answer_block_present);
  EXPECT_EQ(p.think_text, "plan");
  EXPECT_EQ(p.steps[0].step->action.point, (Point{10, 20}));
  EXPECT_EQ(format_reward(p), 1.0);
}

TEST(ParseResponse, GarbageYieldsNothing) {
  const auto p = parse_response("garbage with no tags");
  EXPECT_TRUE(p.steps.empty());
  EXPECT_FALSE(p.answer_block_present);
  EXPECT_EQ(format_reward(p), 0.0);
}

TEST(ParseResponse, MissingAbstractionIsInvalid) {
  const auto p = parse_response(R"(<answer>[{"action":{"action_type":"click"},"status":"done"}]</answer>)");
  ASSERT_EQ(p.steps.size(), 1u);
  EXPECT_FALSE(p.steps[0].valid);
  EXPECT_FALSE(p.steps[0].step.has_value());
}

TEST(ParseResponse, OnlyFirstAnswerBlockIsUsed) {
  const auto text = wrap(Json::array({good_step()})) + "<answer>" + Json::array({good_step(), good_step()}).dump() +
                    "</answer>";
  EXPECT_EQ(parse_response(text).steps.size(), 1u);
}

TEST(ParseResponse, MissingThinkDoesNotInvalidate) {
  const auto p = parse_response("<answer>" + Json::array({good_step()}).dump() + "</answer>");
  EXPECT_FALSE(p.think_text.has_value());
  EXPECT_EQ(format_reward(p), 1.0);
}

TEST(ParseResponse, UnclosedAnswerBlockIsAbsent) {
  const auto p = parse_response("<answer>[" + good_step().dump() + "]");
  EXPECT_FALSE(p.answer_block_present);
  EXPECT_TRUE(p.steps.empty());
}

TEST(ParseResponse, NonArrayPayloadHasNoSteps) {
  const auto p = parse_response("<answer>" + good_step().dump() + "</answer>");
  EXPECT_TRUE(p.answer_block_present);
  EXPECT_TRUE(p.steps.empty());
}

TEST(ParseResponse, MalformedOptionalFieldsAreDropped) {
  Json s = good_step();
  s["action"]["point"] = "not a point";
  s["action"]["slot"] = -2;
  s["action"]["answer_text"] = 7;
  const auto p = parse_response(wrap(Json::array({s})));
  ASSERT_TRUE(p.steps[0].valid);
  EXPECT_FALSE(p.steps[0].step->action.point);
  EXPECT_FALSE(p.steps[0].step->action.slot);
  EXPECT_FALSE(p.steps[0].step->action.answer_text);
}

TEST(ValidateStep, KnownTypeWithAllKeys) {
  EXPECT_TRUE(validate_step(good_step("scroll")));
}

TEST(ValidateStep, MissingStatus) {
  Json s = good_step();
  s.erase("status");
  EXPECT_FALSE(validate_step(s));
}

TEST(ValidateStep, UnknownTypeRejectedForEveryNonMember) {
  EXPECT_FALSE(validate_step(good_step("teleport")));
  for (auto name : kActionTypeNames) EXPECT_TRUE(validate_step(good_step(std::string(name))));
}

TEST(ValidateStep, CaseAndWhitespaceInsensitive) {
  Json s = good_step(" Double_Click\t");
  s["status"] = " DONE ";
  EXPECT_TRUE(validate_step(s));
  EXPECT_EQ(decode_step(s).action.action_type, ActionType::DoubleClick);
  EXPECT_EQ(decode_step(s).status, StepStatus::Done);
}

TEST(ValidateStep, EmptyAbstractionOrWrongShapes) {
  Json s = good_step();
  s["screenshot_abstraction"] = "";
  EXPECT_FALSE(validate_step(s));
  s = good_step();
  s["action"] = "click";
  EXPECT_FALSE(validate_step(s));
  s = good_step();
  s["status"] = "paused";
  EXPECT_FALSE(validate_step(s));
  EXPECT_FALSE(validate_step(Json::array()));
  EXPECT_FALSE(validate_step(Json(3)));
}

TEST(FormatReward, RatioOfValidSteps) {
  Json bad = good_step();
  bad.erase("action");
  EXPECT_EQ(format_reward(parse_response(wrap(Json::array({good_step(), bad, good_step(), bad})))), 0.5);
  EXPECT_EQ(format_reward(parse_response(wrap(Json::array({good_step(), good_step(), good_step()})))), 1.0);
  EXPECT_EQ(format_reward(parse_response(wrap(Json::array()))), 0.0);
}

TEST(ToTrajectory, KeepsValidStepsInOrder) {
  Json bad = good_step();
  bad.erase("status");
  const auto t = to_trajectory(parse_response(wrap(Json::array({good_step("scroll"), bad, good_step("finish")}))));
  EXPECT_EQ(t.kind, TrajectoryKind::Predicted);
  EXPECT_EQ(t.action_types(), (std::vector<ActionType>{ActionType::Scroll, ActionType::Finish}));
  EXPECT_TRUE(to_trajectory(parse_response(wrap(Json::array({bad, bad})))).empty());
}

TEST(Serialization, RenderParseRoundTrip) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<PlanStep> steps;
    const auto n = rng.uniform_int(0, 6);
    for (int k = 0; k < n; ++k) {
      PlanStep s = step(planrl::testing::random_type(rng), rng.bernoulli(0.3) ? StepStatus::Done : StepStatus::InProgress,
                        "obs " + std::to_string(rng.uniform_int(0, 99)));
      if (rng.bernoulli(0.5)) s.action.point = Point{static_cast<double>(rng.uniform_int(0, 999)) + 0.5, 3.25};
      if (rng.bernoulli(0.3)) s.step_instruction = "do thing " + std::to_string(k);
      steps.push_back(s);
    }
    const auto parsed = parse_response(render_response(steps, "t"));
    ASSERT_EQ(parsed.steps.size(), steps.size());
    EXPECT_EQ(to_trajectory(parsed).steps, steps);
    if (!steps.empty()) EXPECT_EQ(format_reward(parsed), 1.0);
  }
}

TEST(ReferenceFromJson, StrictOnInvalidSteps) {
  EXPECT_THROW(reference_from_json(Json::array()), std::invalid_argument);
  EXPECT_THROW(reference_from_json(Json::object()), std::invalid_argument);
  Json bad = good_step();
  bad.erase("status");
  EXPECT_THROW(reference_from_json(Json::array({good_step(), bad})), std::invalid_argument);
  EXPECT_EQ(reference_from_json(Json::array({good_step()})).kind, TrajectoryKind::Reference);
}

// Properties.

TEST(ParserProperty, FormatRewardWithinUnitInterval) {
  Rng rng(3);
  for (int trial = 0; trial < 3000; ++trial) {
    Json arr = Json::array();
    const auto n = rng.uniform_int(0, 8);
    for (int k = 0; k < n; ++k) {
      Json s = good_step(std::string(kActionTypeNames[static_cast<std::size_t>(rng.uniform_int(0, 9))]));
      if (rng.bernoulli(0.25)) s.erase("status");
      if (rng.bernoulli(0.25)) s["action"]["action_type"] = "bogus";
      if (rng.bernoulli(0.1)) s = Json(k);
      arr.push_back(s);
    }
    const double f = format_reward(parse_response(wrap(arr)));
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
}

TEST(ParserProperty, ExtraKeyPermutationDoesNotChangeFormatReward) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    // Build the same objects with extra keys inserted in different orders;
    // emit them as raw text so key order really differs on the wire.
    std::vector<std::string> extras = {"\"x\":1", "\"note\":\"n\"", "\"step_instruction\":\"g\"", "\"zz\":[1,2]"};
    const bool valid = rng.bernoulli(0.7);
    auto render = [&](const std::vector<std::string>& order) {
      std::string obj = "{";
      for (const auto& e : order) obj += e + ",";
      obj += "\"screenshot_abstraction\":\"s\",\"action\":{\"action_type\":\"" + std::string(valid ? "wait" : "nope") +
             "\"},\"status\":\"done\"}";
      return "<answer>[" + obj + "]</answer>";
    };
    const double a = format_reward(parse_response(render(extras)));
    std::shuffle(extras.begin(), extras.end(), std::mt19937(static_cast<unsigned>(trial)));
    EXPECT_EQ(a, format_reward(parse_response(render(extras))));
  }
}

TEST(ParserProperty, DeterministicOnIdenticalInput) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const std::string text = random_text(rng, 200);
    const auto a = parse_response(text);
    const auto b = parse_response(text);
    ASSERT_EQ(a.steps.size(), b.steps.size());
    EXPECT_EQ(a.answer_block_present, b.answer_block_present);
    EXPECT_EQ(format_reward(a), format_reward(b));
  }
}

TEST(ParserFuzz, NeverThrowsOnArbitraryText) {
  Rng rng(21);
  for (int trial = 0; trial < 20000; ++trial) {
    std::string text = random_text(rng, 120);
    if (rng.bernoulli(0.5)) text = "<answer>" + text + "</answer>";
    ASSERT_NO_THROW({
      const auto p = parse_response(text);
      const double f = format_reward(p);
      ASSERT_GE(f, 0.0);
      ASSERT_LE(f, 1.0);
    }) << text;
  }
}

TEST(ParserFuzz, ArbitraryBytesIncludingNonAscii) {
  Rng rng(22);
  for (int trial = 0; trial < 5000; ++trial) {
    std::string text = "<answer>";
    const auto n = rng.uniform_int(0, 64);
    for (int k = 0; k < n; ++k) text += static_cast<char>(rng.uniform_int(0, 255));
    text += "</answer>";
    ASSERT_NO_THROW((void)format_reward(parse_response(text)));
  }
}
