#pragma once

// Trajectory-level reward: greedy position-penalized alignment, discounted
// alignment score, coverage and repetition penalties, and the combination with
// the format reward. Also provides the positional discounted form and an exact
// dynamic-programming alignment used to bound the greedy matcher.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "response_parser.hpp"
#include "types.hpp"

namespace planrl {

struct AlignmentMatch {
  std::size_t pred_index = 0;
  std::size_t ref_index = 0;
  double adjusted_score = 0.0;
  bool operator==(const AlignmentMatch&) const = default;
};

struct AlignmentResult {
  std::vector<AlignmentMatch> matches;
  std::vector<std::size_t> unmatched_pred_indices;
  std::vector<std::size_t> unmatched_ref_indices;

  std::size_t unmatched_total() const { return unmatched_pred_indices.size() + unmatched_ref_indices.size(); }
  bool operator==(const AlignmentResult&) const = default;
};

inline int action_similarity(ActionType pred, ActionType ref) { return pred == ref ? 1 : 0; }

/// Type-only: coordinates, slots and arguments are ignored.
inline int action_similarity(const Action& pred, const Action& ref) {
  return action_similarity(pred.action_type, ref.action_type);
}

namespace detail {

inline std::vector<ActionType> types_of(std::span<const Action> actions) {
  std::vector<ActionType> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(a.action_type);
  return out;
}

inline double adjusted_score(ActionType p, ActionType r, std::size_t i, std::size_t j, const RewardParams& params) {
  const double distance = static_cast<double>(i > j ? i - j : j - i);
  return static_cast<double>(action_similarity(p, r)) - params.position_penalty_rate * distance;
}

// Fills the unmatched index lists from the match list.
inline void fill_unmatched(AlignmentResult& result, std::size_t n_pred, std::size_t n_ref) {
  std::vector<bool> pred_used(n_pred, false), ref_used(n_ref, false);
  for (const auto& m : result.matches) {
    pred_used[m.pred_index] = true;
    ref_used[m.ref_index] = true;
  }
  for (std::size_t i = 0; i < n_pred; ++i)
    if (!pred_used[i]) result.unmatched_pred_indices.push_back(i);
  for (std::size_t j = 0; j < n_ref; ++j)
    if (!ref_used[j]) result.unmatched_ref_indices.push_back(j);
}

}  // namespace detail

/// Scans predicted actions in order. Each one takes the reference index, after
/// the last matched one, with the highest position-penalized similarity
/// (smallest index on ties); the match is kept only if that score is strictly
/// above the acceptance threshold. Matches are strictly monotone in both indices.
inline AlignmentResult greedy_align(std::span<const ActionType> pred, std::span<const ActionType> ref,
                                    const RewardParams& params) {
  AlignmentResult result;
  std::size_t next_ref = 0;
  for (std::size_t i = 0; i < pred.size() && next_ref < ref.size(); ++i) {
    std::size_t best_j = next_ref;
    double best = detail::adjusted_score(pred[i], ref[next_ref], i, next_ref, params);
    for (std::size_t j = next_ref + 1; j < ref.size(); ++j) {
      const double s = detail::adjusted_score(pred[i], ref[j], i, j, params);
      if (s > best) {
        best = s;
        best_j = j;
      }
    }
    if (best > params.accept_threshold) {
      result.matches.push_back({i, best_j, best});
      next_ref = best_j + 1;
    }
  }
  detail::fill_unmatched(result, pred.size(), ref.size());
  return result;
}

inline AlignmentResult greedy_align(std::span<const Action> pred, std::span<const Action> ref,
                                    const RewardParams& params) {
  const auto p = detail::types_of(pred);
  const auto r = detail::types_of(ref);
  return greedy_align(std::span<const ActionType>(p), std::span<const ActionType>(r), params);
}

/// Sum of gamma^i over matched pairs, i being the predicted index. Every
/// accepted match has similarity 1.
inline double discounted_alignment_score(const AlignmentResult& alignment, const RewardParams& params) {
  double score = 0.0;
  for (const auto& m : alignment.matches) score += std::pow(params.gamma, static_cast<double>(m.pred_index));
  return score;
}

/// Discounted score minus the coverage penalty for every unmatched action.
/// This is the quantity the exact alignment maximizes.
inline double alignment_objective(const AlignmentResult& alignment, const RewardParams& params) {
  return discounted_alignment_score(alignment, params) -
         params.coverage_penalty * static_cast<double>(alignment.unmatched_total());
}

/// Maximum discounted return of a reference of length m: sum_{j<m} gamma^j.
inline double reference_normalizer(std::size_t m, const RewardParams& params) {
  double z = 0.0;
  for (std::size_t j = 0; j < m; ++j) z += std::pow(params.gamma, static_cast<double>(j));
  return z;
}

/// Number of positions k >= 2 where types k-2, k-1 and k coincide; a run of
/// length L >= 3 contributes L - 2.
inline std::size_t repetition_count(std::span<const ActionType> types) {
  std::size_t n = 0;
  for (std::size_t k = 2; k < types.size(); ++k)
    if (types[k] == types[k - 1] && types[k - 1] == types[k - 2]) ++n;
  return n;
}

struct AccuracyResult {
  double reward = 0.0;
  AlignmentResult alignment;
  RewardBreakdown partial;  // everything except format_reward and total_reward
};

/// Clip[0,1]( (S_align - coverage * unmatched) / Z_ref - repetition_penalty * N_rep ).
/// Coverage is subtracted before normalization; the repetition penalty after.
inline AccuracyResult accuracy_reward(std::span<const ActionType> pred, std::span<const ActionType> ref,
                                      const RewardParams& params) {
  if (ref.empty()) throw EmptyReference();
  AccuracyResult out;
  out.alignment = greedy_align(pred, ref, params);
  const double s_align = discounted_alignment_score(out.alignment, params);
  const double covered =
      s_align - params.coverage_penalty * static_cast<double>(out.alignment.unmatched_total());
  const double normalized = covered / reference_normalizer(ref.size(), params);
  const std::size_t reps = repetition_count(pred);
  const double raw = normalized - params.repetition_penalty * static_cast<double>(reps);
  out.reward = std::clamp(raw, 0.0, 1.0);

  auto& b = out.partial;
  b.raw_alignment_score = s_align;
  for (const auto& m : out.alignment.matches) b.matched_pairs.push_back({m.pred_index, m.ref_index});
  b.unmatched_pred = out.alignment.unmatched_pred_indices.size();
  b.unmatched_ref = out.alignment.unmatched_ref_indices.size();
  b.repetition_count = reps;
  b.accuracy_reward = out.reward;
  return out;
}

inline AccuracyResult accuracy_reward(const Trajectory& pred, const Trajectory& ref, const RewardParams& params) {
  const auto p = pred.action_types();
  const auto r = ref.action_types();
  return accuracy_reward(std::span<const ActionType>(p), std::span<const ActionType>(r), params);
}

/// R = (1 - lambda_fmt) * R_acc + lambda_fmt * R_fmt. Alignment uses only the
/// valid steps; the format ratio uses all parsed steps.
inline RewardBreakdown total_reward(const ParsedResponse& parsed, const Trajectory& ref, const RewardParams& params) {
  if (ref.empty()) throw EmptyReference();
  const Trajectory pred = to_trajectory(parsed);
  RewardBreakdown b = accuracy_reward(pred, ref, params).partial;
  b.format_reward = format_reward(parsed);
  b.total_reward = (1.0 - params.lambda_fmt) * b.accuracy_reward + params.lambda_fmt * b.format_reward;
  return b;
}

/// Positional discounted form: sum_t gamma^(t-1) (lambda_align sim(pred_t, ref_t)
/// - lambda_rep rep_t), rep_t = 1 when step t completes a same-type triple.
/// Predicted steps beyond the reference have similarity 0.
inline double conceptual_trajectory_reward(std::span<const ActionType> pred, std::span<const ActionType> ref,
                                           const RewardParams& params) {
  double total = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const double sim = t < ref.size() ? static_cast<double>(action_similarity(pred[t], ref[t])) : 0.0;
    const bool rep = t >= 2 && pred[t] == pred[t - 1] && pred[t - 1] == pred[t - 2];
    const double r_t = params.lambda_align * sim - params.lambda_rep * (rep ? 1.0 : 0.0);
    total += std::pow(params.gamma, static_cast<double>(t)) * r_t;
  }
  return total;
}

inline double conceptual_trajectory_reward(const Trajectory& pred, const Trajectory& ref, const RewardParams& params) {
  const auto p = pred.action_types();
  const auto r = ref.action_types();
  return conceptual_trajectory_reward(std::span<const ActionType>(p), std::span<const ActionType>(r), params);
}

inline constexpr std::size_t kOracleMaxLength = 12;

struct OracleAlignment {
  AlignmentResult alignment;
  double objective = 0.0;
};

/// Exact maximizer of alignment_objective over strictly monotone matchings
/// whose pairs all satisfy the acceptance rule. Dynamic programming over
/// suffixes; each accepted pair is worth gamma^i + 2 * coverage_penalty.
inline OracleAlignment optimal_align_oracle(std::span<const ActionType> pred, std::span<const ActionType> ref,
                                            const RewardParams& params) {
  if (pred.size() > kOracleMaxLength || ref.size() > kOracleMaxLength)
    throw SizeLimitExceeded("exact alignment is limited to sequences of length " +
                            std::to_string(kOracleMaxLength));
  const std::size_t n = pred.size(), m = ref.size();
  auto feasible = [&](std::size_t i, std::size_t j) {
    return action_similarity(pred[i], ref[j]) == 1 &&
           detail::adjusted_score(pred[i], ref[j], i, j, params) > params.accept_threshold;
  };
  auto gain = [&](std::size_t i) {
    return std::pow(params.gamma, static_cast<double>(i)) + 2.0 * params.coverage_penalty;
  };
  std::vector<std::vector<double>> best(n + 1, std::vector<double>(m + 1, 0.0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      double v = std::max(best[i + 1][j], best[i][j + 1]);
      if (feasible(i, j)) v = std::max(v, gain(i) + best[i + 1][j + 1]);
      best[i][j] = v;
    }
  }
  OracleAlignment out;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    if (feasible(i, j) && gain(i) + best[i + 1][j + 1] >= best[i][j]) {
      out.alignment.matches.push_back({i, j, detail::adjusted_score(pred[i], ref[j], i, j, params)});
      ++i;
      ++j;
    } else if (best[i + 1][j] >= best[i][j]) {
      ++i;
    } else {
      ++j;
    }
  }
  detail::fill_unmatched(out.alignment, n, m);
  out.objective = alignment_objective(out.alignment, params);
  return out;
}

inline OracleAlignment optimal_align_oracle(std::span<const Action> pred, std::span<const Action> ref,
                                            const RewardParams& params) {
  const auto p = detail::types_of(pred);
  const auto r = detail::types_of(ref);
  return optimal_align_oracle(std::span<const ActionType>(p), std::span<const ActionType>(r), params);
}

// ---- batch scoring ----

/// 17 significant digits, so every double round-trips.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One JSON object per breakdown, keys in a fixed order.
inline std::string breakdown_to_line(const RewardBreakdown& b) {
  std::string s = "{\"format_reward\":" + format_real(b.format_reward);
  s += ",\"raw_alignment_score\":" + format_real(b.raw_alignment_score);
  s += ",\"matched_pairs\":[";
  for (std::size_t k = 0; k < b.matched_pairs.size(); ++k) {
    if (k) s += ',';
    s += '[' + std::to_string(b.matched_pairs[k].pred_index) + ',' + std::to_string(b.matched_pairs[k].ref_index) + ']';
  }
  s += "],\"unmatched_pred\":" + std::to_string(b.unmatched_pred);
  s += ",\"unmatched_ref\":" + std::to_string(b.unmatched_ref);
  s += ",\"repetition_count\":" + std::to_string(b.repetition_count);
  s += ",\"accuracy_reward\":" + format_real(b.accuracy_reward);
  s += ",\"total_reward\":" + format_real(b.total_reward);
  s += '}';
  return s;
}

/// Accepts either a bare step array or an object with a "steps" array.
inline Trajectory reference_from_record(const Json& record) {
  if (record.is_object() && record.contains("steps")) return reference_from_json(record.at("steps"));
  return reference_from_json(record);
}

struct BatchScoreError : std::runtime_error {
  BatchScoreError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

/// Reads records {"response": str, "reference": steps} one per line and writes
/// one breakdown line per record. Blank lines are skipped. Malformed reference
/// records raise BatchScoreError; malformed responses simply score low.
inline std::size_t score_batch(std::istream& in, std::ostream& out, const RewardParams& params) {
  std::string line;
  std::size_t line_no = 0, scored = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    Json record = Json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object() || !record.contains("reference"))
      throw BatchScoreError(line_no, "record is not an object with a \"reference\" field");
    Trajectory ref;
    try {
      ref = reference_from_record(record.at("reference"));
    } catch (const std::invalid_argument& e) {
      throw BatchScoreError(line_no, e.what());
    }
    std::string response;
    if (auto r = record.find("response"); r != record.end() && r->is_string()) response = r->get<std::string>();
    out << breakdown_to_line(total_reward(parse_response(response), ref, params)) << '\n';
    ++scored;
  }
  return scored;
}

}  // namespace planrl
