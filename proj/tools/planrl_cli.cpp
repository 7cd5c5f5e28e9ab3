// planrl: score, train, eval, ablate, gen-tasks.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "planrl/config.hpp"
#include "planrl/experiment.hpp"

using namespace planrl;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out = "out";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "config file of key = value lines");
  cmd->add_option("--seed", f.seeds, "seed list (replaces run.seeds)")->delimiter(',');
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--override", f.overrides, "key=value, applied after the config file")->take_all();
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError("cannot open config file " + f.config);
    read_config(in, cfg);
  }
  for (const auto& o : f.overrides) apply_override(cfg, o);
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  validate(cfg);
  return cfg;
}

std::string pct(double v) { return format_real(v); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anticipatory planning toy: reward scoring, GRPO training and plan-act evaluation"};
  app.require_subcommand(1);

  CommonFlags score_f, train_f, eval_f, ablate_f, gen_f;
  ScoreInputs score_in;
  std::string checkpoint, planner, axis;
  std::vector<double> values;
  std::size_t count = 0;
  bool count_set = false;

  auto* score = app.add_subcommand("score", "score predictions against references");
  add_common(score, score_f);
  score->add_option("--predictions", score_in.predictions, "one response per line");
  score->add_option("--references", score_in.references, "one reference step array per line");
  score->add_option("--pairs", score_in.pairs, "one {response, reference} record per line");

  auto* train = app.add_subcommand("train", "Stage 1, optionally Stage 2, per seed");
  add_common(train, train_f);

  auto* eval = app.add_subcommand("eval", "plan-act evaluation");
  add_common(eval, eval_f);
  eval->add_option("--checkpoint", checkpoint, "checkpoint.json from train");
  eval->add_option("--planner", planner, "policy | scripted | always-finish");

  auto* ablate = app.add_subcommand("ablate", "sweep one axis over every seed");
  add_common(ablate, ablate_f);
  ablate->add_option("--axis", axis, "horizon | lambda_rep | gamma | stage2");
  ablate->add_option("--values", values, "comma separated sweep values")->delimiter(',');

  auto* gen = app.add_subcommand("gen-tasks", "write a generated task corpus");
  add_common(gen, gen_f);
  gen->add_option("--count", count, "number of tasks")->each([&](const std::string&) { count_set = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (score->parsed()) {
      const bool pairs = !score_in.pairs.empty();
      const bool split = !score_in.predictions.empty() || !score_in.references.empty();
      if (pairs == split || (split && (score_in.predictions.empty() || score_in.references.empty()))) {
        std::cerr << "score: give either --pairs or both --predictions and --references\n";
        return kExitUsage;
      }
      const auto cfg = resolve(score_f);
      const ScoreSummary s = cmd_score(cfg, score_in, score_f.out);
      std::cout << "scored " << s.count << " samples; mean total reward " << format_real(s.total_reward.mean) << '\n';
    } else if (train->parsed()) {
      const auto cfg = resolve(train_f);
      for (const auto& r : cmd_train(cfg, train_f.out))
        std::cout << "seed " << r.seed << ": reward " << format_real(r.initial.mean_reward) << " -> "
                  << format_real(r.final_stage1.mean_reward) << ", success " << pct(r.eval_final.success_rate)
                  << '\n';
    } else if (eval->parsed()) {
      if (!planner.empty()) eval_f.overrides.push_back("eval.planner=" + planner);
      const auto cfg = resolve(eval_f);
      const PlanActReport r = cmd_eval(cfg, checkpoint, eval_f.out);
      std::cout << "success rate " << pct(r.success_rate) << ", mean episode length "
                << format_real(r.mean_episode_length) << ", grounded accuracy " << format_real(r.grounded_accuracy)
                << '\n';
    } else if (ablate->parsed()) {
      auto cfg = resolve(ablate_f);
      if (!axis.empty()) cfg.ablate_axis = axis;
      if (!values.empty()) cfg.ablate_values = values;
      const auto rows = cmd_ablate(cfg, ablate_f.out);
      write_ablation_csv(std::cout, cfg.ablate_axis, rows);
    } else if (gen->parsed()) {
      if (!gen_f.seeds.empty()) gen_f.overrides.push_back("tasks.seed=" + std::to_string(gen_f.seeds.front()));
      if (count_set) gen_f.overrides.push_back("tasks.count=" + std::to_string(count));
      const auto cfg = resolve(gen_f);
      std::cout << digest_hex(cmd_gen_tasks(cfg, gen_f.out)) << '\n';
    }
  } catch (const CommandError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}
