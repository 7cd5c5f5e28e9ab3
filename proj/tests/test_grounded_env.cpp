#include <gtest/gtest.h>

#include <sstream>

#include "planrl/grounded_env.hpp"
#include "test_support.hpp"

using namespace planrl;
using T = ActionType;

namespace {

// Two widgets: a button at (100..200, 100..150) and a text field below it.
EnvTask form_task() {
  EnvTask t;
  t.task_id = "form";
  t.instruction = "click Save, type the name, finish";
  t.widgets = {Widget{0, Rect{100, 100, 200, 150}, "Save button", T::Click},
               Widget{1, Rect{100, 300, 400, 340}, "Name field", T::TypeText}};
  std::vector<PlanStep> steps = {
      PlanStep{"s0", Action{T::Click, Point{150, 125}, 0, {}, {}}, StepStatus::InProgress, {}},
      PlanStep{"s1", Action{T::TypeText, Point{250, 320}, 1, {{"text", "bo"}}, {}}, StepStatus::InProgress, {}},
      PlanStep{"s2", Action{T::Finish, {}, {}, {}, {}}, StepStatus::Done, {}}};
  t.reference = Trajectory::reference(std::move(steps));
  return std::move(t).checked();
}

EnvTask tool_task() {
  EnvTask t;
  t.task_id = "calc";
  t.kind = TaskKind::ToolUse;
  t.instruction = "compute 6 * 7";
  t.tool_options = {{{"tool", "calculator"}, {"expr", "6 * 7"}}};
  t.answer_options = {"42"};
  t.expected_answer = "42";
  std::vector<PlanStep> steps = {
      PlanStep{"s0", Action{T::CallTool, {}, 0, t.tool_options[0], {}}, StepStatus::InProgress, {}},
      PlanStep{"s1", Action{T::Answer, {}, 0, {}, "42"}, StepStatus::Done, {}}};
  t.reference = Trajectory::reference(std::move(steps));
  return std::move(t).checked();
}

Action click_at(double x, double y) { return Action{T::Click, Point{x, y}, {}, {}, {}}; }

}  // namespace

TEST(CoordMatch, InclusiveEdges) {
  const Rect r{10, 20, 30, 40};
  EXPECT_EQ(coord_match({10, 20}, r), 1);
  EXPECT_EQ(coord_match({30, 40}, r), 1);
  EXPECT_EQ(coord_match({20, 30}, r), 1);
  EXPECT_EQ(coord_match({9.999, 30}, r), 0);
  EXPECT_EQ(coord_match({20, 40.001}, r), 0);
}

TEST(AnswerMatch, Normalization) {
  EXPECT_EQ(answer_match("  Paris ", "paris"), 1);
  EXPECT_EQ(answer_match("New\t\tYork", "new york"), 1);
  EXPECT_EQ(answer_match("42", "42.0"), 0);
  EXPECT_EQ(answer_match("", ""), 1);
  EXPECT_EQ(normalize_answer("  A  b \n C "), "a b c");
}

TEST(EnvTask, CheckedRejectsBadTasks) {
  auto t = form_task();
  t.widgets[1].bbox = Rect{150, 120, 300, 200};
  EXPECT_THROW(t.checked(), std::invalid_argument);
  t = form_task();
  t.widgets[0].bbox = Rect{5, 5, 5, 10};
  EXPECT_THROW(t.checked(), std::invalid_argument);
  t = tool_task();
  t.expected_answer.reset();
  EXPECT_THROW(t.checked(), std::invalid_argument);
}

TEST(ExecuteStep, ClickInsideCompletesWidget) {
  const auto task = form_task();
  const auto out = execute_step(initial_state(task), click_at(150, 125), task);
  EXPECT_TRUE(out.state.completed_widgets.contains(0));
  EXPECT_EQ(out.state.step_count, 1u);
  EXPECT_EQ(out.reference_index, 0u);
}

TEST(ExecuteStep, MissIsNoOpButCountsStep) {
  const auto task = form_task();
  const auto s0 = initial_state(task);
  const auto out = execute_step(s0, click_at(900, 900), task);
  EXPECT_TRUE(out.state.completed_widgets.empty());
  EXPECT_EQ(out.state.step_count, 1u);
}

TEST(ExecuteStep, WrongActionOnWidgetDoesNothing) {
  const auto task = form_task();
  const auto out = execute_step(initial_state(task), Action{T::DoubleClick, Point{150, 125}, {}, {}, {}}, task);
  EXPECT_TRUE(out.state.completed_widgets.empty());
}

TEST(ExecuteStep, SlotFallbackAndTypingTarget) {
  const auto task = form_task();
  auto s = execute_step(initial_state(task), Action{T::Click, {}, 0, {}, {}}, task).state;
  EXPECT_TRUE(s.completed_widgets.contains(0));
  // Typing ignores point and slot and fills the pending field.
  s = execute_step(s, Action{T::TypeText, {}, {}, {{"text", "x"}}, {}}, task).state;
  EXPECT_TRUE(s.completed_widgets.contains(1));
}

TEST(ExecuteStep, FinishAndAnswerTerminate) {
  const auto task = tool_task();
  auto s = execute_step(initial_state(task), Action{T::Finish, {}, {}, {}, {}}, task).state;
  EXPECT_TRUE(s.finished);
  EXPECT_THROW(execute_step(s, Action{T::Wait, {}, {}, {}, {}}, task), EpisodeFinished);
  const auto a = execute_step(initial_state(task), Action{T::Answer, {}, {}, {}, "7"}, task);
  EXPECT_TRUE(a.state.finished);
  EXPECT_EQ(a.state.emitted_answer, "7");
}

TEST(ExecuteStep, ToolCallRecordsResult) {
  const auto task = tool_task();
  const auto out = execute_step(initial_state(task), task.reference.steps[0].action, task);
  EXPECT_EQ(out.state.tool_result, "42");
  EXPECT_EQ(out.emitted, "42");
  EXPECT_FALSE(out.state.finished);
}

TEST(ExecuteStep, DoesNotMutateInput) {
  const auto task = form_task();
  const auto s0 = initial_state(task);
  const auto copy = s0;
  (void)execute_step(s0, click_at(150, 125), task);
  EXPECT_EQ(s0, copy);
}

TEST(Observation, DeterministicAndMarksFinish) {
  const auto task = form_task();
  const auto s0 = initial_state(task);
  EXPECT_EQ(abstract_observation(s0, task), abstract_observation(s0, task));
  EXPECT_EQ(abstract_observation(s0, task).find("[FINISHED]"), std::string::npos);
  const auto s1 = execute_step(s0, Action{T::Finish, {}, {}, {}, {}}, task).state;
  EXPECT_NE(abstract_observation(s1, task).find("[FINISHED]"), std::string::npos);
  const auto s2 = execute_step(s0, click_at(150, 125), task).state;
  EXPECT_NE(abstract_observation(s0, task), abstract_observation(s2, task));
}

TEST(ReferencePosition, AdvancesWithProgress) {
  const auto task = form_task();
  auto s = initial_state(task);
  EXPECT_EQ(reference_position(s, task), 0u);
  s = execute_step(s, click_at(150, 125), task).state;
  EXPECT_EQ(reference_position(s, task), 1u);
  s = execute_step(s, Action{T::TypeText, {}, {}, {}, {}}, task).state;
  EXPECT_EQ(reference_position(s, task), 2u);
}

TEST(GroundedReward, GroundingUsesReferenceBbox) {
  const auto task = form_task();
  const auto s0 = initial_state(task);
  auto score = [&](const Action& a) {
    const auto out = execute_step(s0, a, task);
    return grounded_reward(PlanStep{"x", a, StepStatus::InProgress, {}}, task, out);
  };
  EXPECT_EQ(score(click_at(100, 100)), 1);
  EXPECT_EQ(score(click_at(99, 100)), 0);
  EXPECT_EQ(score(Action{T::Click, {}, 1, {}, {}}), 0);  // slot of the wrong widget
  EXPECT_EQ(score(Action{T::Wait, {}, {}, {}, {}}), 0);
  EXPECT_EQ(score(Action{T::Click, {}, {}, {}, {}}), 0);  // no coordinate at all
}

TEST(GroundedReward, OtherTypesCompareWithReferenceType) {
  const auto task = form_task();
  const auto s1 = execute_step(initial_state(task), click_at(150, 125), task).state;
  const Action type{T::TypeText, {}, {}, {}, {}};
  EXPECT_EQ(grounded_reward(PlanStep{"x", type, StepStatus::InProgress, {}}, task, execute_step(s1, type, task)), 1);
  const Action scroll{T::Scroll, {}, {}, {}, {}};
  EXPECT_EQ(grounded_reward(PlanStep{"x", scroll, StepStatus::InProgress, {}}, task, execute_step(s1, scroll, task)),
            0);
}

TEST(GroundedReward, ToolStepsCompareEmittedText) {
  const auto task = tool_task();
  const auto s0 = initial_state(task);
  const Action call = task.reference.steps[0].action;
  EXPECT_EQ(grounded_reward(PlanStep{"x", call, StepStatus::InProgress, {}}, task, execute_step(s0, call, task)), 1);
  const Action wrong{T::CallTool, {}, {}, {{"tool", "calculator"}, {"expr", "6 + 7"}}, {}};
  EXPECT_EQ(grounded_reward(PlanStep{"x", wrong, StepStatus::InProgress, {}}, task, execute_step(s0, wrong, task)), 0);
  const Action answer{T::Answer, {}, {}, {}, " 42 "};
  EXPECT_EQ(grounded_reward(PlanStep{"x", answer, StepStatus::Done, {}}, task, execute_step(s0, answer, task)), 1);
}

TEST(GroundedReward, MissingGroundTruth) {
  const auto task = form_task();
  ExecOutcome out;
  out.reference_index = 3;
  EXPECT_THROW(grounded_reward(PlanStep{"x", click_at(0, 0), StepStatus::InProgress, {}}, task, out),
               MissingGroundTruth);
}

TEST(TaskSuccess, RequiresWidgetsFinishAndAnswer) {
  const auto form = form_task();
  auto s = initial_state(form);
  s.finished = true;
  EXPECT_FALSE(task_success(s, form));
  s.completed_widgets = {0, 1};
  EXPECT_TRUE(task_success(s, form));
  const auto tool = tool_task();
  auto t = initial_state(tool);
  t.finished = true;
  t.emitted_answer = "41";
  EXPECT_FALSE(task_success(t, tool));
  t.emitted_answer = "42";
  EXPECT_TRUE(task_success(t, tool));
}

// Plan-act loop contract.

TEST(PlanActLoop, ExecutesOnlyFirstActionAndBoundsHistory) {
  const auto task = form_task();
  std::vector<std::size_t> history_sizes;
  const Planner planner = [&](const PlanRequest& req) -> std::optional<Trajectory> {
    history_sizes.push_back(req.context.history().size());
    EXPECT_EQ(req.horizon, 3u);
    // A miss, then a Finish that must never run.
    return Trajectory::predicted({PlanStep{"a", click_at(900, 900), StepStatus::InProgress, {}},
                                  PlanStep{"b", Action{T::Finish, {}, {}, {}, {}}, StepStatus::Done, {}}});
  };
  const auto trace = plan_act_loop(planner, task, 5, 3, 2);
  ASSERT_EQ(trace.iterations.size(), 5u);
  EXPECT_FALSE(trace.final_state.finished);
  EXPECT_EQ(history_sizes, (std::vector<std::size_t>{0, 1, 2, 2, 2}));
  for (const auto& it : trace.iterations) {
    EXPECT_EQ(it.executed, click_at(900, 900));
    EXPECT_LE(it.context.history().size(), 2u);
  }
}

TEST(PlanActLoop, PlannerFailureRunsWait) {
  const auto task = form_task();
  int calls = 0;
  const Planner planner = [&](const PlanRequest&) -> std::optional<Trajectory> {
    if (++calls == 1) throw std::runtime_error("boom");
    if (calls == 2) return std::nullopt;
    return Trajectory::predicted({});
  };
  const auto trace = plan_act_loop(planner, task, 3, 1, 4);
  ASSERT_EQ(trace.iterations.size(), 3u);
  for (const auto& it : trace.iterations) {
    EXPECT_TRUE(it.planner_failed);
    EXPECT_EQ(it.executed.action_type, T::Wait);
  }
}

TEST(PlanActLoop, StopsOnFinish) {
  const auto task = form_task();
  const auto trace = plan_act_loop(always_finish_planner(), task, 10, 4, 4);
  EXPECT_EQ(trace.iterations.size(), 1u);
  EXPECT_FALSE(trace.success);
}

TEST(PlanActLoop, RejectsZeroLimits) {
  const auto task = form_task();
  EXPECT_THROW(plan_act_loop(always_finish_planner(), task, 0, 1, 1), std::invalid_argument);
  EXPECT_THROW(plan_act_loop(always_finish_planner(), task, 1, 0, 1), std::invalid_argument);
}

TEST(PlanActLoop, ScriptedPlannerSolvesGeneratedTasks) {
  const auto tasks = generate_tasks(5, 40, TaskShape{0.5});
  for (const auto& task : tasks) {
    const auto trace = plan_act_loop(scripted_optimal_planner(), task, 20, 4, 4);
    EXPECT_TRUE(trace.success) << task.task_id;
    EXPECT_EQ(trace.iterations.size(), task.reference.size()) << task.task_id;
    for (const auto& it : trace.iterations) EXPECT_EQ(it.grounded_reward, 1) << task.task_id;
  }
}

// Task generation and corpus I/O.

TEST(GenerateTasks, DeterministicAndValid) {
  const auto a = generate_tasks(9, 30, TaskShape{0.7});
  EXPECT_EQ(a, generate_tasks(9, 30, TaskShape{0.7}));
  EXPECT_NE(a, generate_tasks(10, 30, TaskShape{0.7}));
  std::size_t gui = 0;
  for (const auto& t : a) {
    EXPECT_NO_THROW(t.checked());
    gui += t.kind == TaskKind::Gui;
    if (t.kind == TaskKind::ToolUse) {
      EXPECT_EQ(t.tool_options.size(), 3u);
      EXPECT_EQ(t.answer_options.size(), 3u);
    }
    EXPECT_EQ(t.reference.steps.back().status, StepStatus::Done);
  }
  EXPECT_EQ(gui, 21u);
}

TEST(GenerateTasks, BboxesDisjointProperty) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    TaskShape shape;
    shape.max_widgets = 16;
    shape.min_widgets = 8;
    for (const auto& t : generate_tasks(seed, 5, shape))
      for (std::size_t a = 0; a < t.widgets.size(); ++a)
        for (std::size_t b = a + 1; b < t.widgets.size(); ++b)
          EXPECT_FALSE(t.widgets[a].bbox.intersects(t.widgets[b].bbox));
  }
}

TEST(GenerateTasks, ShapeValidation) {
  TaskShape s;
  s.min_widgets = 4;
  s.max_widgets = 2;
  EXPECT_THROW(generate_tasks(1, 1, s), std::invalid_argument);
  s = TaskShape{};
  s.max_widgets = 17;
  EXPECT_THROW(generate_tasks(1, 1, s), std::invalid_argument);
  EXPECT_TRUE(generate_tasks(1, 0, TaskShape{}).empty());
}

TEST(Corpus, RoundTrip) {
  const auto tasks = generate_tasks(3, 12, TaskShape{0.5});
  std::stringstream buf;
  write_corpus(buf, tasks);
  EXPECT_EQ(read_corpus(buf), tasks);
}

TEST(Corpus, ErrorsNameTheLine) {
  std::stringstream buf;
  write_corpus(buf, generate_tasks(3, 1, TaskShape{}));
  buf << "{\"task_id\":\"x\"}\n";
  try {
    read_corpus(buf);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("corpus line 2"), std::string::npos);
  }
  std::stringstream garbage("not json\n");
  EXPECT_THROW(read_corpus(garbage), std::invalid_argument);
}
