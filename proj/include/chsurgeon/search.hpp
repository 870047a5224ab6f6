#pragma once

// Two-phase search for the best channel replacement plan:
//   1. sweep every single edit and record its score delta against the
//      unedited baseline;
//   2. keep the N edits with the largest deltas and score every valid
//      non-empty combination of them.
// Scorer calls: 1 + C(C-1) [+ C with zero edits] + (#valid combinations),
// against the nominal C^2 + 2^N - 1 of the unoptimized count.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chsurgeon/error.hpp"
#include "chsurgeon/feature_store.hpp"
#include "chsurgeon/parallel.hpp"
#include "chsurgeon/remap.hpp"
#include "chsurgeon/scorer.hpp"

namespace chsurgeon {

inline constexpr std::size_t kMaxTopN = 20;

struct SearchConfig {
  std::size_t top_n = 10;
  bool allow_zero_edits = false;
  std::optional<std::vector<std::size_t>> eval_subset;  // phase-2 images
  std::size_t jobs = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (top_n < 1 || top_n > kMaxTopN) {
      fail(ErrorCode::invalid_argument, "top_n must be in [1, " + std::to_string(kMaxTopN) + "]");
    }
    if (jobs < 1) fail(ErrorCode::invalid_argument, "jobs must be >= 1");
  }
};

struct SweepEntry {
  ChannelEdit edit;
  double delta = 0.0;
};

struct PairSweepTable {
  double baseline = 0.0;
  std::vector<SweepEntry> entries;
  std::size_t scorer_calls = 0;
};

struct TopNSet {
  std::vector<SweepEntry> pairs;  // delta desc, then edit asc
};

struct SizeBest {
  std::size_t k = 0;
  ChannelPlan plan;
  double score = 0.0;
};

struct CallLedger {
  std::size_t baseline = 0;
  std::size_t sweep = 0;
  std::size_t combos = 0;

  std::size_t total() const { return baseline + sweep + combos; }
};

struct CombinationResult {
  ChannelPlan best_plan;
  double best_score = 0.0;
  std::vector<SizeBest> per_size_best;  // ascending k, only sizes with a valid subset
  std::size_t scorer_calls = 0;
};

struct SearchResult {
  std::size_t channels = 0;
  std::uint64_t seed = 0;
  double baseline = 0.0;
  ChannelPlan best_plan;
  double best_score = 0.0;
  std::vector<SizeBest> per_size_best;
  CallLedger scorer_calls;
  PairSweepTable table;
  TopNSet top_n;
};

// C^2 + 2^N - 1.
inline std::uint64_t nominal_call_count(std::size_t channels, std::size_t n) {
  return static_cast<std::uint64_t>(channels) * channels + ((std::uint64_t{1} << n) - 1);
}

// Strictly better under the search's ordering: higher score, then fewer
// edits, then the lexicographically smaller edit list.
inline bool better_candidate(double score, const ChannelPlan& plan, double other_score, const ChannelPlan& other) {
  if (score != other_score) return score > other_score;
  if (plan.size() != other.size()) return plan.size() < other.size();
  return plan < other;
}

namespace detail {

template <typename Fn>
decltype(auto) with_context(const std::string& context, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), context + ": " + e.what());
  }
}

inline PairSweepTable sweep_edits(const FeatureCache& cache, const Scorer& scorer, const std::vector<ChannelEdit>& edits,
                                  std::size_t jobs) {
  const std::size_t channels = cache.channels();
  PairSweepTable table;
  table.baseline =
      with_context("baseline", [&] { return scorer.score(cache, ChannelMap::identity(channels)).aggregate; });
  std::vector<double> scores(edits.size());
  parallel_for(edits.size(), jobs, [&](std::size_t k) {
    const ChannelMap map = plan_to_map(ChannelPlan({edits[k]}), channels);
    scores[k] = with_context("edit " + edits[k].to_string(), [&] { return scorer.score(cache, map).aggregate; });
  });
  table.entries.reserve(edits.size());
  for (std::size_t k = 0; k < edits.size(); ++k) table.entries.push_back({edits[k], scores[k] - table.baseline});
  table.scorer_calls = 1 + edits.size();
  return table;
}

}  // namespace detail

// Every ordered pair i != j (then every Zero(i) when allowed), in edit order.
inline PairSweepTable pair_sweep(const FeatureCache& cache, const Scorer& scorer, const SearchConfig& config) {
  const std::size_t channels = cache.channels();
  std::vector<ChannelEdit> edits;
  edits.reserve(channels * channels);
  for (std::size_t i = 0; i < channels; ++i) {
    for (std::size_t j = 0; j < channels; ++j) {
      if (i != j) edits.push_back(ChannelEdit::replace(i, j));
    }
  }
  if (config.allow_zero_edits) {
    for (std::size_t i = 0; i < channels; ++i) edits.push_back(ChannelEdit::zero(i));
  }
  return detail::sweep_edits(cache, scorer, edits, config.jobs);
}

inline PairSweepTable zero_ablation_sweep(const FeatureCache& cache, const Scorer& scorer, std::size_t jobs = 1) {
  std::vector<ChannelEdit> edits;
  for (std::size_t i = 0; i < cache.channels(); ++i) edits.push_back(ChannelEdit::zero(i));
  return detail::sweep_edits(cache, scorer, edits, jobs);
}

// Largest deltas first; equal deltas admit the smaller edit. No filtering on
// the sign of the delta.
inline TopNSet select_top_n(const PairSweepTable& table, std::size_t n) {
  std::vector<SweepEntry> sorted = table.entries;
  std::stable_sort(sorted.begin(), sorted.end(), [](const SweepEntry& a, const SweepEntry& b) {
    if (a.delta != b.delta) return a.delta > b.delta;
    return a.edit < b.edit;
  });
  if (sorted.size() > n) sorted.erase(sorted.begin() + static_cast<std::ptrdiff_t>(n), sorted.end());
  return TopNSet{std::move(sorted)};
}

// Scores every non-empty subset of the top-N set whose edits have distinct
// sources. Subsets are visited by bitmask (bit k = top_n.pairs[k]).
inline CombinationResult enumerate_combinations(const FeatureCache& cache, const Scorer& scorer, const TopNSet& top_n,
                                                double baseline, const SearchConfig& config) {
  config.validate();
  const std::size_t n = top_n.pairs.size();
  if (n > kMaxTopN) fail(ErrorCode::too_many_candidates, "top-N set larger than " + std::to_string(kMaxTopN));
  const std::size_t channels = cache.channels();

  std::vector<ChannelPlan> plans;
  for (std::uint32_t mask = 1; mask < (std::uint32_t{1} << n); ++mask) {
    std::vector<ChannelEdit> edits;
    std::vector<bool> used(channels, false);
    bool valid = true;
    for (std::size_t k = 0; k < n && valid; ++k) {
      if (!(mask & (std::uint32_t{1} << k))) continue;
      const ChannelEdit& e = top_n.pairs[k].edit;
      if (used[e.source()]) valid = false;
      used[e.source()] = true;
      edits.push_back(e);
    }
    if (valid) plans.emplace_back(std::move(edits));
  }

  ImageSubset subset;
  if (config.eval_subset) subset = std::span<const std::size_t>(*config.eval_subset);
  std::vector<double> scores(plans.size());
  parallel_for(plans.size(), config.jobs, [&](std::size_t k) {
    const ChannelMap map = plan_to_map(plans[k], channels);
    scores[k] = detail::with_context("combination of " + std::to_string(plans[k].size()) + " edits",
                                     [&] { return scorer.score(cache, map, subset).aggregate; });
  });

  CombinationResult result;
  result.best_score = baseline;
  result.scorer_calls = plans.size();
  std::vector<std::optional<SizeBest>> by_size(n + 1);
  for (std::size_t k = 0; k < plans.size(); ++k) {
    if (better_candidate(scores[k], plans[k], result.best_score, result.best_plan)) {
      result.best_score = scores[k];
      result.best_plan = plans[k];
    }
    auto& slot = by_size[plans[k].size()];
    if (!slot || better_candidate(scores[k], plans[k], slot->score, slot->plan)) {
      slot = SizeBest{plans[k].size(), plans[k], scores[k]};
    }
  }
  for (auto& slot : by_size) {
    if (slot) result.per_size_best.push_back(std::move(*slot));
  }
  return result;
}

// Sweep, select, enumerate. Phase 2 runs on `eval_cache` when given,
// otherwise on `cache` (optionally restricted to config.eval_subset); a
// distinct phase-2 split costs one extra baseline call.
inline SearchResult run_search(const FeatureCache& cache, const Scorer& scorer, const SearchConfig& config,
                               const FeatureCache* eval_cache = nullptr) {
  config.validate();
  if (eval_cache && eval_cache->channels() != cache.channels()) {
    fail(ErrorCode::dim_mismatch, "evaluation cache has a different channel count");
  }
  SearchResult result;
  result.channels = cache.channels();
  result.seed = config.seed;
  result.table = pair_sweep(cache, scorer, config);
  result.scorer_calls.baseline = 1;
  result.scorer_calls.sweep = result.table.scorer_calls - 1;
  result.top_n = select_top_n(result.table, config.top_n);

  const FeatureCache& phase2 = eval_cache ? *eval_cache : cache;
  double baseline = result.table.baseline;
  if (eval_cache || config.eval_subset) {
    ImageSubset subset;
    if (config.eval_subset) subset = std::span<const std::size_t>(*config.eval_subset);
    baseline = detail::with_context("phase-2 baseline", [&] {
      return scorer.score(phase2, ChannelMap::identity(phase2.channels()), subset).aggregate;
    });
    ++result.scorer_calls.baseline;
  }
  CombinationResult combos = enumerate_combinations(phase2, scorer, result.top_n, baseline, config);
  result.scorer_calls.combos = combos.scorer_calls;
  result.baseline = baseline;
  result.best_plan = std::move(combos.best_plan);
  result.best_score = combos.best_score;
  result.per_size_best = std::move(combos.per_size_best);
  return result;
}

inline nlohmann::json sweep_entry_to_json(const SweepEntry& e) {
  nlohmann::json j = edit_to_json(e.edit);
  if (e.edit.is_zero()) j["j"] = -1;
  j["delta"] = e.delta;
  return j;
}

inline nlohmann::json table_to_json(const PairSweepTable& table, std::size_t channels, std::uint64_t seed) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : table.entries) entries.push_back(sweep_entry_to_json(e));
  return nlohmann::json{{"channels", channels},
                        {"seed", seed},
                        {"baseline", table.baseline},
                        {"scorer_calls", table.scorer_calls},
                        {"entries", std::move(entries)}};
}

inline nlohmann::json search_result_to_json(const SearchResult& r) {
  nlohmann::json per_size = nlohmann::json::array();
  for (const auto& s : r.per_size_best) {
    per_size.push_back({{"k", s.k}, {"score", s.score}, {"plan", plan_to_json(s.plan, r.channels)}});
  }
  nlohmann::json top = nlohmann::json::array();
  for (const auto& e : r.top_n.pairs) top.push_back(sweep_entry_to_json(e));
  return nlohmann::json{
      {"seed", r.seed},
      {"baseline", r.baseline},
      {"best_score", r.best_score},
      {"best_plan", plan_to_json(r.best_plan, r.channels)},
      {"per_size", std::move(per_size)},
      {"scorer_calls",
       {{"baseline", r.scorer_calls.baseline}, {"sweep", r.scorer_calls.sweep}, {"combos", r.scorer_calls.combos}}},
      {"nominal_calls", nominal_call_count(r.channels, r.top_n.pairs.size())},
      {"top_n", std::move(top)},
  };
}

// Per-size curve as CSV with columns k,score.
inline std::string per_size_csv(const SearchResult& r) {
  std::string out = "k,score\n";
  for (const auto& s : r.per_size_best) {
    out += std::to_string(s.k) + "," + nlohmann::json(s.score).dump() + "\n";
  }
  return out;
}

}  // namespace chsurgeon
