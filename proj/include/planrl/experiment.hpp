#pragma once

// Command implementations behind the CLI: batch scoring, training runs,
// plan-act evaluation, ablation sweeps and task generation. Everything that a
// command writes lives under its output directory; wallclock figures go to
// timing.jsonl so the remaining files are byte-reproducible.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"
#include "grounded_env.hpp"
#include "response_parser.hpp"
#include "reward_engine.hpp"
#include "rng.hpp"
#include "toy_policy.hpp"
#include "training.hpp"

namespace planrl {

namespace fs = std::filesystem;

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitBadReference = 2,
  kExitBadCorpus = 3,
  kExitBadCheckpoint = 4,
  kExitUnknownAxis = 5,
};

struct CommandError : std::runtime_error {
  CommandError(int code, const std::string& what) : std::runtime_error(what), exit_code(code) {}
  int exit_code;
};

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw CommandError(kExitUsage, "cannot write " + p.string());
  return f;
}

inline std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline std::uint64_t file_digest(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return fnv1a64(os.str());
}

inline std::string digest_hex(std::uint64_t v) { return detail::hex64(v); }

inline void echo_config(const ExperimentConfig& cfg, const fs::path& out_dir) {
  auto f = detail::open_out(out_dir / "config.resolved");
  write_config(f, cfg);
}

// ---- tasks ----

inline std::vector<EnvTask> load_tasks(const ExperimentConfig& cfg) {
  if (cfg.corpus.empty()) return generate_tasks(cfg.task_seed, cfg.task_count, cfg.task_shape);
  std::ifstream f(cfg.corpus);
  if (!f) throw CommandError(kExitBadCorpus, "cannot open task corpus " + cfg.corpus);
  try {
    return read_corpus(f);
  } catch (const std::exception& e) {
    throw CommandError(kExitBadCorpus, cfg.corpus + ": " + e.what());
  }
}

// ---- checkpoints ----

inline constexpr int kCheckpointVersion = 1;

inline Json checkpoint_to_json(const ToyPolicy& policy, const ExperimentConfig& cfg) {
  Json j;
  j["format"] = "planrl-checkpoint";
  j["format_version"] = kCheckpointVersion;
  j["buckets"] = policy.buckets();
  j["horizon"] = policy.horizon();
  j["slots"] = policy.slots();
  j["config"] = config_to_string(cfg);
  j["params"] = std::vector<double>(policy.parameters().begin(), policy.parameters().end());
  return j;
}

inline ToyPolicy policy_from_checkpoint(const Json& j) {
  const auto fail = [](const std::string& why) { return CommandError(kExitBadCheckpoint, "checkpoint: " + why); };
  if (!j.is_object() || j.value("format", std::string()) != "planrl-checkpoint") throw fail("not a checkpoint file");
  if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
      j["format_version"].get<int>() != kCheckpointVersion)
    throw fail("unsupported format_version (expected " + std::to_string(kCheckpointVersion) + ")");
  try {
    ToyPolicy p(j.at("buckets").get<std::size_t>(), j.at("horizon").get<std::size_t>(),
                j.at("slots").get<std::size_t>());
    const auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != p.parameter_count())
      throw fail("parameter count " + std::to_string(params.size()) + " does not match dimensions (" +
                 std::to_string(p.parameter_count()) + ")");
    std::copy(params.begin(), params.end(), p.parameters().begin());
    if (!p.all_finite()) throw fail("non-finite parameters");
    return p;
  } catch (const CommandError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(e.what());
  }
}

inline void write_checkpoint(const fs::path& p, const ToyPolicy& policy, const ExperimentConfig& cfg) {
  auto f = detail::open_out(p);
  f << checkpoint_to_json(policy, cfg).dump() << '\n';
}

inline ToyPolicy read_checkpoint(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw CommandError(kExitBadCheckpoint, "cannot open checkpoint " + p.string());
  const Json j = Json::parse(f, nullptr, false);
  if (j.is_discarded()) throw CommandError(kExitBadCheckpoint, "checkpoint is not valid JSON: " + p.string());
  return policy_from_checkpoint(j);
}

// ---- score ----

struct ComponentStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct ScoreSummary {
  std::size_t count = 0;
  ComponentStats format_reward, raw_alignment_score, accuracy_reward, total_reward, repetition_count;
};

namespace detail {

inline std::string response_from_line(const std::string& line) {
  const Json j = Json::parse(line, nullptr, false);
  if (!j.is_discarded()) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_object()) {
      const auto r = j.find("response");
      if (r != j.end() && r->is_string()) return r->get<std::string>();
    }
  }
  return line;
}

inline void accumulate(ComponentStats& s, double v, std::size_t n) {
  if (n == 0) {
    s = {v, v, v};
    return;
  }
  s.mean += v;
  s.min = std::min(s.min, v);
  s.max = std::max(s.max, v);
}

inline nlohmann::ordered_json stats_json(const ComponentStats& s) {
  return nlohmann::ordered_json{{"mean", s.mean}, {"min", s.min}, {"max", s.max}};
}

}  // namespace detail

/// Scores aligned prediction and reference streams. A prediction line is a
/// JSON string, an object with a "response" string, or raw response text; a
/// reference line is a step array or {"steps": [...]}. Line counts must match.
inline ScoreSummary score_streams(std::istream& predictions, std::istream& references, std::ostream& report,
                                  const RewardParams& params) {
  const auto preds = detail::read_lines(predictions);
  const auto refs = detail::read_lines(references);
  if (preds.size() != refs.size())
    throw CommandError(kExitBadReference, "line count mismatch: " + std::to_string(preds.size()) +
                                              " predictions vs " + std::to_string(refs.size()) + " references");
  std::vector<Trajectory> parsed_refs;
  parsed_refs.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Json j = Json::parse(refs[i], nullptr, false);
    if (j.is_discarded()) throw CommandError(kExitBadReference, "reference line " + std::to_string(i + 1) + ": not JSON");
    try {
      parsed_refs.push_back(reference_from_record(j));
    } catch (const std::exception& e) {
      throw CommandError(kExitBadReference, "reference line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  ScoreSummary sum;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const RewardBreakdown b = total_reward(parse_response(detail::response_from_line(preds[i])), parsed_refs[i], params);
    report << breakdown_to_line(b) << '\n';
    detail::accumulate(sum.format_reward, b.format_reward, i);
    detail::accumulate(sum.raw_alignment_score, b.raw_alignment_score, i);
    detail::accumulate(sum.accuracy_reward, b.accuracy_reward, i);
    detail::accumulate(sum.total_reward, b.total_reward, i);
    detail::accumulate(sum.repetition_count, static_cast<double>(b.repetition_count), i);
  }
  sum.count = preds.size();
  if (sum.count > 0) {
    const double n = static_cast<double>(sum.count);
    for (auto* s : {&sum.format_reward, &sum.raw_alignment_score, &sum.accuracy_reward, &sum.total_reward,
                    &sum.repetition_count})
      s->mean /= n;
  }
  return sum;
}

inline nlohmann::ordered_json summary_to_json(const ScoreSummary& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  j["format_reward"] = detail::stats_json(s.format_reward);
  j["raw_alignment_score"] = detail::stats_json(s.raw_alignment_score);
  j["accuracy_reward"] = detail::stats_json(s.accuracy_reward);
  j["total_reward"] = detail::stats_json(s.total_reward);
  j["repetition_count"] = detail::stats_json(s.repetition_count);
  return j;
}

/// Writes score_report.jsonl and score_summary.json. With `pairs` set, the
/// input is one {"response", "reference"} record per line instead.
struct ScoreInputs {
  std::string predictions;
  std::string references;
  std::string pairs;
};

inline ScoreSummary cmd_score(const ExperimentConfig& cfg, const ScoreInputs& in, const fs::path& out_dir) {
  cfg.train.reward_params.checked();
  std::istringstream pred_stream, ref_stream;
  if (!in.pairs.empty()) {
    std::ifstream f(in.pairs);
    if (!f) throw CommandError(kExitUsage, "cannot open " + in.pairs);
    std::string preds, refs;
    std::size_t line_no = 0;
    for (const auto& line : detail::read_lines(f)) {
      ++line_no;
      const Json rec = Json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object() || !rec.contains("reference"))
        throw CommandError(kExitBadReference, "pairs line " + std::to_string(line_no) + ": expected an object with a \"reference\" field");
      const auto r = rec.find("response");
      preds += (r != rec.end() && r->is_string() ? Json(r->get<std::string>()) : Json("")).dump() + '\n';
      refs += rec["reference"].dump() + '\n';
    }
    pred_stream.str(preds);
    ref_stream.str(refs);
  } else {
    std::ifstream pf(in.predictions), rf(in.references);
    if (!pf) throw CommandError(kExitUsage, "cannot open " + in.predictions);
    if (!rf) throw CommandError(kExitUsage, "cannot open " + in.references);
    std::ostringstream a, b;
    a << pf.rdbuf();
    b << rf.rdbuf();
    pred_stream.str(a.str());
    ref_stream.str(b.str());
  }
  std::ostringstream report;
  const ScoreSummary s = score_streams(pred_stream, ref_stream, report, cfg.train.reward_params);
  echo_config(cfg, out_dir);
  detail::open_out(out_dir / "score_report.jsonl") << report.str();
  detail::open_out(out_dir / "score_summary.json") << summary_to_json(s).dump(2) << '\n';
  return s;
}

// ---- train / eval pipeline ----

struct SeedRun {
  std::uint64_t seed = 0;
  PolicyRewardStats initial;      // untrained policy, Stage 1 reward
  PolicyRewardStats after_stage1;  // Stage 1 reward of the Stage 1 policy
  PolicyRewardStats stage1_grounded;  // Stage 2 reward of the Stage 1 policy
  PolicyRewardStats final_stage1;  // Stage 1 reward of the final policy
  PolicyRewardStats final_stage2;  // Stage 2 (grounded) reward of the final policy
  PlanActReport eval_stage1;
  PlanActReport eval_final;
  ToyPolicy policy{1, 1, 0};
};

inline PlanActReport evaluate_policy(const ToyPolicy& policy, const std::vector<EnvTask>& tasks,
                                     const ExperimentConfig& cfg) {
  return evaluate_plan_act(policy_planner(policy), tasks, cfg.eval_max_steps, cfg.eval_horizon,
                           cfg.train.history_window);
}

/// Stage 1, then Stage 2 when enabled, followed by evaluation. With a run
/// directory the metrics streams, timing and checkpoint are written there.
inline SeedRun run_seed(const std::vector<EnvTask>& tasks, ExperimentConfig cfg, std::uint64_t seed,
                        const std::optional<fs::path>& run_dir = std::nullopt) {
  if (tasks.empty()) throw CommandError(kExitBadCorpus, "task corpus is empty");
  cfg.train.seed = seed;
  SeedRun r;
  r.seed = seed;
  const std::uint64_t eval_seed = derive_seed(cfg.eval_seed, {seed});

  std::optional<std::ofstream> timing;
  if (run_dir) timing.emplace(detail::open_out(*run_dir / "timing.jsonl"));
  const auto stage_sink = [&](const char* file, int stage, std::optional<std::ofstream>& stream) -> MetricsSink {
    if (!run_dir) return {};
    stream.emplace(detail::open_out(*run_dir / file));
    return [&stream, &timing, stage](const StepMetrics& m) {
      *stream << metrics_to_line(m) << '\n';
      *timing << "{\"stage\":" << stage << ",\"step\":" << m.step << ",\"wallclock_ms\":" << format_real(m.wallclock_ms)
              << "}\n";
    };
  };

  r.initial = evaluate_policy_rewards(initial_policy(cfg.train), tasks, cfg.train, TrainStage::One, cfg.eval_samples,
                                      eval_seed);
  std::optional<std::ofstream> s1_stream, s2_stream;
  TrainResult s1 = train_stage1(tasks, cfg.train, stage_sink("metrics_stage1.jsonl", 1, s1_stream));
  r.after_stage1 = evaluate_policy_rewards(s1.policy, tasks, cfg.train, TrainStage::One, cfg.eval_samples, eval_seed);
  r.stage1_grounded = evaluate_policy_rewards(s1.policy, tasks, cfg.train, TrainStage::Two, cfg.eval_samples, eval_seed);
  r.eval_stage1 = evaluate_policy(s1.policy, tasks, cfg);
  r.policy = std::move(s1.policy);
  if (cfg.stage2) {
    TrainResult s2 = train_stage2(tasks, r.policy, cfg.train, stage_sink("metrics_stage2.jsonl", 2, s2_stream));
    r.policy = std::move(s2.policy);
    r.final_stage1 = evaluate_policy_rewards(r.policy, tasks, cfg.train, TrainStage::One, cfg.eval_samples, eval_seed);
    r.eval_final = evaluate_policy(r.policy, tasks, cfg);
  } else {
    r.final_stage1 = r.after_stage1;
    r.eval_final = r.eval_stage1;
  }
  r.final_stage2 = evaluate_policy_rewards(r.policy, tasks, cfg.train, TrainStage::Two, cfg.eval_samples, eval_seed);
  if (run_dir) write_checkpoint(*run_dir / "checkpoint.json", r.policy, cfg);
  return r;
}

namespace detail {

inline constexpr const char* kTrainColumns =
    "seed,initial_reward,stage1_reward,stage1_repetition_rate,stage1_grounded_hit_rate,stage1_success_rate,final_reward,"
    "final_repetition_rate,final_grounded_hit_rate,final_success_rate,final_mean_episode_length,"
    "final_grounded_accuracy";

inline std::vector<double> train_row(const SeedRun& r) {
  return {r.initial.mean_reward,
          r.after_stage1.mean_reward,
          r.after_stage1.repetition_rate,
          r.stage1_grounded.grounded_hit_rate,
          r.eval_stage1.success_rate,
          r.final_stage1.mean_reward,
          r.final_stage1.repetition_rate,
          r.final_stage2.grounded_hit_rate,
          r.eval_final.success_rate,
          r.eval_final.mean_episode_length,
          r.eval_final.grounded_accuracy};
}

inline void write_row(std::ostream& out, const std::string& label, const std::vector<double>& values) {
  out << label;
  for (double v : values) out << ',' << format_real(v);
  out << '\n';
}

inline std::vector<double> column_means(const std::vector<std::vector<double>>& rows) {
  std::vector<double> mean(rows.empty() ? 0 : rows.front().size(), 0.0);
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.size(); ++k) mean[k] += r[k];
  for (double& v : mean) v /= static_cast<double>(rows.size());
  return mean;
}

}  // namespace detail

/// Per seed: seed-<s>/{metrics_stage1.jsonl, metrics_stage2.jsonl,
/// timing.jsonl, checkpoint.json}; summary.csv holds per-seed and mean rows.
inline std::vector<SeedRun> cmd_train(const ExperimentConfig& cfg, const fs::path& out_dir) {
  validate(cfg);
  const auto tasks = load_tasks(cfg);
  echo_config(cfg, out_dir);
  std::vector<SeedRun> runs;
  std::vector<std::vector<double>> rows;
  for (auto seed : cfg.seeds) {
    runs.push_back(run_seed(tasks, cfg, seed, out_dir / ("seed-" + std::to_string(seed))));
    rows.push_back(detail::train_row(runs.back()));
  }
  auto csv = detail::open_out(out_dir / "summary.csv");
  csv << detail::kTrainColumns << '\n';
  for (std::size_t i = 0; i < runs.size(); ++i) detail::write_row(csv, std::to_string(runs[i].seed), rows[i]);
  detail::write_row(csv, "mean", detail::column_means(rows));
  return runs;
}

inline Planner make_planner(PlannerKind kind, const ToyPolicy* policy) {
  switch (kind) {
    case PlannerKind::Scripted: return scripted_optimal_planner();
    case PlannerKind::AlwaysFinish: return always_finish_planner();
    default:
      if (!policy) throw CommandError(kExitUsage, "the policy planner needs a checkpoint");
      return policy_planner(*policy);
  }
}

/// eval_report.json plus traces.jsonl (one record per loop iteration).
inline PlanActReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint, const fs::path& out_dir) {
  validate(cfg);
  std::optional<ToyPolicy> policy;
  if (cfg.planner == PlannerKind::Policy) {
    if (checkpoint.empty()) throw CommandError(kExitUsage, "the policy planner needs --checkpoint");
    policy = read_checkpoint(checkpoint);
  }
  const auto tasks = load_tasks(cfg);
  const PlanActReport report = evaluate_plan_act(make_planner(cfg.planner, policy ? &*policy : nullptr), tasks,
                                                 cfg.eval_max_steps, cfg.eval_horizon, cfg.train.history_window);
  echo_config(cfg, out_dir);
  auto traces = detail::open_out(out_dir / "traces.jsonl");
  for (const auto& t : report.traces)
    for (std::size_t i = 0; i < t.iterations.size(); ++i)
      traces << iteration_to_json(t.task_id, i, t.iterations[i]).dump() << '\n';
  nlohmann::ordered_json j;
  j["planner"] = detail::config_keys().at("eval.planner").get(cfg);
  j["tasks"] = tasks.size();
  j["success_rate"] = report.success_rate;
  j["mean_episode_length"] = report.mean_episode_length;
  j["grounded_accuracy"] = report.grounded_accuracy;
  j["per_task"] = nlohmann::ordered_json::array();
  for (const auto& t : report.traces)
    j["per_task"].push_back({{"task_id", t.task_id}, {"success", t.success}, {"length", t.iterations.size()}});
  detail::open_out(out_dir / "eval_report.json") << j.dump(2) << '\n';
  return report;
}

// ---- ablation ----

inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes = {"horizon", "lambda_rep", "gamma", "stage2"};
  return axes;
}

/// Config for one sweep point. lambda_rep moves both the trajectory-level
/// penalty weight and the per-triple deduction used in training.
inline ExperimentConfig ablation_point(ExperimentConfig cfg, const std::string& axis, double value) {
  if (axis == "horizon") {
    if (value < 1 || value != static_cast<double>(static_cast<std::size_t>(value)))
      throw ConfigError("horizon values must be positive integers");
    cfg.train.horizon = cfg.eval_horizon = static_cast<std::size_t>(value);
  } else if (axis == "lambda_rep") {
    cfg.train.reward_params.lambda_rep = cfg.train.reward_params.repetition_penalty = value;
  } else if (axis == "gamma") {
    cfg.train.reward_params.gamma = value;
  } else if (axis == "stage2") {
    cfg.stage2 = value != 0.0;
  } else {
    throw CommandError(kExitUnknownAxis, "unknown sweep axis: " + axis + " (expected horizon, lambda_rep, gamma or stage2)");
  }
  return cfg;
}

struct AblationRow {
  double value = 0.0;
  std::optional<std::uint64_t> seed;  // empty for the mean row
  double success_rate = 0.0;
  double mean_reward = 0.0;
  double repetition_rate = 0.0;
  double grounded_accuracy = 0.0;
  double mean_episode_length = 0.0;
};

/// Runs every (value, seed) point; returns per-seed rows followed by a mean
/// row for each value. Per-run files go under out_dir/<axis>=<value>/seed-<s>.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::string& axis,
                                             const std::vector<double>& values,
                                             const std::optional<fs::path>& out_dir = std::nullopt) {
  if (std::find(ablation_axes().begin(), ablation_axes().end(), axis) == ablation_axes().end())
    throw CommandError(kExitUnknownAxis, "unknown sweep axis: " + axis + " (expected horizon, lambda_rep, gamma or stage2)");
  validate(cfg);
  const auto tasks = load_tasks(cfg);
  std::vector<AblationRow> rows;
  for (double v : values) {
    const ExperimentConfig point = ablation_point(cfg, axis, v);
    validate(point);
    AblationRow mean{v, std::nullopt};
    for (auto seed : cfg.seeds) {
      std::optional<fs::path> dir;
      if (out_dir) dir = *out_dir / (axis + "=" + Json(v).dump()) / ("seed-" + std::to_string(seed));
      const SeedRun r = run_seed(tasks, point, seed, dir);
      AblationRow row{v, seed, r.eval_final.success_rate, r.final_stage1.mean_reward, r.final_stage1.repetition_rate,
                      r.eval_final.grounded_accuracy, r.eval_final.mean_episode_length};
      rows.push_back(row);
      mean.success_rate += row.success_rate;
      mean.mean_reward += row.mean_reward;
      mean.repetition_rate += row.repetition_rate;
      mean.grounded_accuracy += row.grounded_accuracy;
      mean.mean_episode_length += row.mean_episode_length;
    }
    const double n = static_cast<double>(cfg.seeds.size());
    mean.success_rate /= n;
    mean.mean_reward /= n;
    mean.repetition_rate /= n;
    mean.grounded_accuracy /= n;
    mean.mean_episode_length /= n;
    rows.push_back(mean);
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::string& axis, const std::vector<AblationRow>& rows) {
  out << "axis,value,seed,success_rate,mean_reward,repetition_rate,grounded_accuracy,mean_episode_length\n";
  for (const auto& r : rows) {
    out << axis << ',' << Json(r.value).dump() << ',' << (r.seed ? std::to_string(*r.seed) : "mean");
    for (double v : {r.success_rate, r.mean_reward, r.repetition_rate, r.grounded_accuracy, r.mean_episode_length})
      out << ',' << format_real(v);
    out << '\n';
  }
}

inline std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  auto rows = run_ablation(cfg, cfg.ablate_axis, cfg.ablate_values, out_dir);
  echo_config(cfg, out_dir);
  auto csv = detail::open_out(out_dir / "ablation.csv");
  write_ablation_csv(csv, cfg.ablate_axis, rows);
  return rows;
}

// ---- task generation ----

/// Writes tasks.jsonl and returns the FNV-1a digest of its bytes.
inline std::uint64_t cmd_gen_tasks(const ExperimentConfig& cfg, const fs::path& out_dir) {
  validate(cfg);
  const auto tasks = generate_tasks(cfg.task_seed, cfg.task_count, cfg.task_shape);
  std::ostringstream os;
  write_corpus(os, tasks);
  echo_config(cfg, out_dir);
  detail::open_out(out_dir / "tasks.jsonl") << os.str();
  return fnv1a64(os.str());
}

}  // namespace planrl
