#include <gtest/gtest.h>

#include <functional>

#include "chsurgeon/fixtures.hpp"
#include "chsurgeon/search.hpp"
#include "test_support.hpp"

using namespace chsurgeon;
using chsurgeon::testing::code_of;
using chsurgeon::testing::ConstantScorer;

namespace {

// Score = f(map), independent of features.
class FunctionScorer final : public Scorer {
 public:
  explicit FunctionScorer(std::function<double(const ChannelMap&)> fn) : fn_(std::move(fn)) {}
  ScoreResult score(const FeatureCache& cache, const ChannelMap& map, ImageSubset subset = {}) const override {
    check_map(map, cache.channels());
    const auto images = resolve_subset(cache.images(), subset);
    const double v = fn_(map);
    return {v, std::vector<double>(images.size(), v), {}};
  }
  std::string_view metric() const override { return "miou"; }

 private:
  std::function<double(const ChannelMap&)> fn_;
};

// Additive per-edit terms plus a pairwise interaction, so combinations are
// not simply the sum of their sweep deltas.
double pseudo_score(const ChannelMap& map) {
  double s = 0.3;
  std::int64_t edited = 0;
  for (std::size_t c = 0; c < map.size(); ++c) {
    if (map[c] == static_cast<std::int64_t>(c)) continue;
    const auto t = static_cast<std::uint64_t>(map[c] + 1);
    s += static_cast<double>((c * 2654435761u + t * 40503u) % 97) / 1000.0 - 0.04;
    edited += static_cast<std::int64_t>(c) * 7 + map[c];
  }
  return s + static_cast<double>(edited % 13) / 5000.0;
}

FeatureCache blank_cache(std::size_t channels, std::size_t images = 1) {
  return FeatureCache({images, channels, 1, 1}, std::vector<float>(images * channels, 0.0f),
                      std::vector<ImageRecord>(images, ImageRecord{"x", BinaryMask{{0}}}));
}

SweepEntry entry(std::size_t i, std::size_t j, double delta) { return {ChannelEdit::replace(i, j), delta}; }

// Number of non-empty subsets of `top` with pairwise distinct sources.
std::size_t count_valid_subsets(const TopNSet& top) {
  std::size_t count = 0;
  const std::size_t n = top.pairs.size();
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    bool ok = true;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        if ((mask >> a & 1) && (mask >> b & 1) && top.pairs[a].edit.source() == top.pairs[b].edit.source()) ok = false;
      }
    }
    count += ok;
  }
  return count;
}

std::vector<ChannelEdit> edits_of(const TopNSet& top) {
  std::vector<ChannelEdit> out;
  for (const auto& e : top.pairs) out.push_back(e.edit);
  return out;
}

}  // namespace

TEST(Search, ConfigValidation) {
  SearchConfig c;
  c.top_n = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::invalid_argument);
  c.top_n = kMaxTopN + 1;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::invalid_argument);
  c.top_n = kMaxTopN;
  c.jobs = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::invalid_argument);
}

TEST(Search, ConstantScorerGivesZeroDeltasAndEmptyPlan) {
  const FeatureCache cache = blank_cache(5);
  const ConstantScorer scorer(0.4);
  const SearchResult r = run_search(cache, scorer, SearchConfig{});
  ASSERT_EQ(r.table.entries.size(), 20u);
  for (const auto& e : r.table.entries) EXPECT_EQ(e.delta, 0.0);
  EXPECT_TRUE(r.best_plan.empty());
  EXPECT_EQ(r.best_score, 0.4);
  // All ties: the top-N set is the first ten edits in canonical order.
  ASSERT_EQ(r.top_n.pairs.size(), 10u);
  EXPECT_EQ(r.top_n.pairs.front().edit, ChannelEdit::replace(0, 1));
  EXPECT_EQ(r.top_n.pairs.back().edit, ChannelEdit::replace(2, 1));
}

TEST(Search, TwoChannelSweepHasTwoEntries) {
  const PairSweepTable t = pair_sweep(blank_cache(2), ConstantScorer(), SearchConfig{});
  ASSERT_EQ(t.entries.size(), 2u);
  EXPECT_EQ(t.entries[0].edit, ChannelEdit::replace(0, 1));
  EXPECT_EQ(t.entries[1].edit, ChannelEdit::replace(1, 0));
  EXPECT_EQ(t.scorer_calls, 3u);

  SearchConfig zero;
  zero.allow_zero_edits = true;
  EXPECT_EQ(pair_sweep(blank_cache(2), ConstantScorer(), zero).entries.size(), 4u);
}

TEST(Search, PlantedPairHasStrictlyLargestDelta) {
  fixtures::FixtureSpec spec;
  spec.planted = {{9, 4, 2.0}};
  spec.seed = 12;
  const fixtures::Fixture fx = fixtures::generate(spec);
  const PairSweepTable t = pair_sweep(fx.cache, SegmentationScorer(fx.head), SearchConfig{});
  const TopNSet top = select_top_n(t, 2);
  EXPECT_EQ(top.pairs[0].edit, ChannelEdit::replace(9, 4));
  EXPECT_GT(top.pairs[0].delta, top.pairs[1].delta);
}

TEST(Search, ZeroAblationOfUnusedChannelIsExactlyNeutral) {
  const FeatureCache cache = chsurgeon::testing::random_mask_cache({6, 4, 3, 3}, 21);
  const SegmentationScorer scorer(LinearSegHead{{1.0, -0.5, 0.0, 0.7}, 0.1});
  const PairSweepTable t = zero_ablation_sweep(cache, scorer);
  ASSERT_EQ(t.entries.size(), 4u);
  EXPECT_EQ(t.entries[2].edit, ChannelEdit::zero(2));
  EXPECT_EQ(t.entries[2].delta, 0.0);
  EXPECT_EQ(t.scorer_calls, 5u);
}

TEST(Search, ZeroingANoiseChannelHelps) {
  // Channel 0 carries the mask as +-1, channel 1 is strong noise.
  Rng rng(4);
  const Dims dims{8, 2, 4, 4};
  auto records = chsurgeon::testing::mask_records(dims.images, dims.plane(), rng);
  std::vector<float> data(dims.total());
  for (std::size_t d = 0; d < dims.images; ++d) {
    const auto& gt = std::get<BinaryMask>(records[d].ground_truth).pixels;
    for (std::size_t p = 0; p < dims.plane(); ++p) {
      data[d * dims.image_stride() + p] = gt[p] ? 1.0f : -1.0f;
      data[d * dims.image_stride() + dims.plane() + p] = static_cast<float>(3.0 * rng.gaussian());
    }
  }
  const FeatureCache cache(dims, std::move(data), std::move(records));
  const PairSweepTable t = zero_ablation_sweep(cache, SegmentationScorer(LinearSegHead{{1.0, 1.0}, 0.0}));
  EXPECT_LT(t.baseline, 1.0);
  EXPECT_GT(t.entries[1].delta, 0.0);
  EXPECT_NEAR(t.baseline + t.entries[1].delta, 1.0, 1e-12);
}

TEST(Search, TopNOrdersByDeltaThenEdit) {
  PairSweepTable t;
  t.entries = {entry(2, 0, 0.1), entry(0, 1, -0.3), entry(1, 0, 0.1), entry(0, 2, 0.5), entry(1, 2, -0.2)};
  const TopNSet top = select_top_n(t, 4);
  ASSERT_EQ(top.pairs.size(), 4u);
  EXPECT_EQ(top.pairs[0].edit, ChannelEdit::replace(0, 2));
  EXPECT_EQ(top.pairs[1].edit, ChannelEdit::replace(1, 0));
  EXPECT_EQ(top.pairs[2].edit, ChannelEdit::replace(2, 0));
  // Negative deltas stay eligible.
  EXPECT_EQ(top.pairs[3].edit, ChannelEdit::replace(1, 2));
  EXPECT_EQ(select_top_n(t, 10).pairs.size(), 5u);
}

TEST(Search, SingleCandidateEnumeratesOnce) {
  const FeatureCache cache = blank_cache(3);
  const FunctionScorer scorer(pseudo_score);
  SearchConfig config;
  config.top_n = 1;
  const SearchResult r = run_search(cache, scorer, config);
  EXPECT_EQ(r.scorer_calls.combos, 1u);
  ASSERT_EQ(r.per_size_best.size(), 1u);
  EXPECT_EQ(r.per_size_best[0].plan.edits(), std::vector<ChannelEdit>{r.top_n.pairs[0].edit});
}

TEST(Search, DuplicateSourceSubsetsAreSkipped) {
  const FeatureCache cache = blank_cache(3);
  const TopNSet top{{entry(0, 1, 0.2), entry(0, 2, 0.1), entry(1, 2, 0.05)}};
  const ConstantScorer inner;
  const CountingScorer counter(inner);
  const CombinationResult r = enumerate_combinations(cache, counter, top, 0.25, SearchConfig{});
  // 7 subsets, minus {0->1, 0->2} and {0->1, 0->2, 1->2}.
  EXPECT_EQ(r.scorer_calls, 5u);
  EXPECT_EQ(counter.calls(), 5u);
}

TEST(Search, CombinationPhaseMatchesBruteForce) {
  Rng rng(99);
  for (int t = 0; t < 30; ++t) {
    const std::size_t c = 3 + rng.uniform_below(4);
    const FeatureCache cache = chsurgeon::testing::random_mask_cache({4, c, 3, 3}, rng.next());
    const SegmentationScorer scorer(chsurgeon::testing::random_seg_head(c, rng));
    SearchConfig config;
    config.top_n = 1 + rng.uniform_below(5);
    const SearchResult r = run_search(cache, scorer, config);
    const auto oracle = fixtures::brute_force_best(cache, scorer, edits_of(r.top_n), config.top_n);
    ASSERT_EQ(r.best_plan, oracle.plan);
    ASSERT_EQ(r.best_score, oracle.score);
  }
}

TEST(Search, PerSizeCurveHoldsBestOfEachSize) {
  const FeatureCache cache = blank_cache(4);
  const FunctionScorer scorer(pseudo_score);
  SearchConfig config;
  config.top_n = 5;
  const SearchResult r = run_search(cache, scorer, config);
  for (const SizeBest& s : r.per_size_best) {
    EXPECT_EQ(s.plan.size(), s.k);
    EXPECT_EQ(s.score, pseudo_score(plan_to_map(s.plan, 4)));
    EXPECT_LE(s.score, r.best_score);
  }
}

TEST(Search, CallLedgerMatchesCountingScorer) {
  const FunctionScorer inner(pseudo_score);
  for (std::size_t c : {4, 8, 16}) {
    for (std::size_t n : {2, 4, 6}) {
      const FeatureCache cache = blank_cache(c);
      const CountingScorer counter(inner);
      SearchConfig config;
      config.top_n = n;
      const SearchResult r = run_search(cache, counter, config);
      EXPECT_EQ(r.scorer_calls.baseline, 1u);
      EXPECT_EQ(r.scorer_calls.sweep, c * (c - 1));
      EXPECT_EQ(r.scorer_calls.combos, count_valid_subsets(r.top_n));
      EXPECT_EQ(counter.calls(), r.scorer_calls.total());
      EXPECT_LE(r.scorer_calls.total(), nominal_call_count(c, n));
    }
  }
}

TEST(Search, FullWidthCallCount) {
  const FeatureCache cache = blank_cache(256);
  const FunctionScorer inner(pseudo_score);
  const CountingScorer counter(inner);
  const SearchResult r = run_search(cache, counter, SearchConfig{});
  EXPECT_EQ(r.scorer_calls.sweep, 65280u);
  EXPECT_EQ(counter.calls(), 1u + 65280u + count_valid_subsets(r.top_n));
  EXPECT_EQ(nominal_call_count(256, 10), 66559u);
}

TEST(Search, SeparatePhaseTwoSplitCostsOneBaselineCall) {
  const FeatureCache cache = chsurgeon::testing::random_mask_cache({6, 4, 3, 3}, 2);
  const FeatureCache held_out = chsurgeon::testing::random_mask_cache({5, 4, 3, 3}, 3);
  Rng rng(5);
  const SegmentationScorer inner(chsurgeon::testing::random_seg_head(4, rng));
  const CountingScorer counter(inner);
  const SearchResult r = run_search(cache, counter, SearchConfig{}, &held_out);
  EXPECT_EQ(r.scorer_calls.baseline, 2u);
  EXPECT_EQ(counter.calls(), r.scorer_calls.total());
  EXPECT_EQ(r.baseline, inner.score(held_out, ChannelMap::identity(4)).aggregate);
  EXPECT_EQ(r.best_score, inner.score(held_out, plan_to_map(r.best_plan, 4)).aggregate);

  SearchConfig subset;
  subset.eval_subset = std::vector<std::size_t>{0, 2, 4};
  const CountingScorer counter2(inner);
  const SearchResult r2 = run_search(cache, counter2, subset);
  EXPECT_EQ(r2.scorer_calls.baseline, 2u);
  EXPECT_EQ(counter2.calls(), r2.scorer_calls.total());

  const FeatureCache narrow = chsurgeon::testing::random_mask_cache({5, 3, 3, 3}, 3);
  EXPECT_EQ(code_of([&] { run_search(cache, inner, SearchConfig{}, &narrow); }), ErrorCode::dim_mismatch);
}

TEST(Search, ResultIsIndependentOfWorkerCount) {
  fixtures::FixtureSpec spec;
  spec.planted = {{3, 7, 2.0}, {10, 0, 2.0}};
  spec.seed = 5;
  const fixtures::Fixture fx = fixtures::generate(spec);
  const SegmentationScorer scorer(fx.head);
  std::string reference;
  for (std::size_t jobs : {1, 2, 4, 8}) {
    SearchConfig config;
    config.jobs = jobs;
    const std::string dump = search_result_to_json(run_search(fx.cache, scorer, config)).dump();
    if (reference.empty()) reference = dump;
    EXPECT_EQ(dump, reference) << "jobs=" << jobs;
  }
}

TEST(Search, ScorerErrorsCarryTheFailingEdit) {
  const FeatureCache cache = blank_cache(4);
  const FunctionScorer scorer([](const ChannelMap& m) -> double {
    if (m[2] == 1) fail(ErrorCode::adapter_crash, "boom");
    return 0.0;
  });
  for (std::size_t jobs : {1, 4}) {
    SearchConfig config;
    config.jobs = jobs;
    try {
      pair_sweep(cache, scorer, config);
      ADD_FAILURE() << "expected failure";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::adapter_crash);
      EXPECT_NE(std::string(e.what()).find("edit 2->1"), std::string::npos) << e.what();
    }
  }
}

TEST(Search, JsonAndCsvOutputs) {
  const FeatureCache cache = blank_cache(3);
  SearchConfig config;
  config.top_n = 2;
  config.seed = 17;
  const SearchResult r = run_search(cache, FunctionScorer(pseudo_score), config);
  const nlohmann::json j = search_result_to_json(r);
  EXPECT_EQ(j["seed"], 17);
  EXPECT_EQ(j["nominal_calls"], 12);
  EXPECT_EQ(j["scorer_calls"]["sweep"], 6);
  EXPECT_EQ(plan_from_json(j["best_plan"]).plan, r.best_plan);

  const std::string csv = per_size_csv(r);
  EXPECT_EQ(csv.rfind("k,score\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(1 + r.per_size_best.size()));

  PairSweepTable zero;
  zero.entries = {{ChannelEdit::zero(1), 0.25}};
  const nlohmann::json tj = table_to_json(zero, 3, 0);
  EXPECT_EQ(tj["entries"][0]["j"], -1);
  EXPECT_EQ(tj["entries"][0]["i"], 1);
}

// Two-phase search versus exhaustive search over every single edit. The gap
// is reported, not bounded; the only hard property is that the exhaustive
// optimum is never worse.
TEST(Search, GapToExhaustiveSearchIsMeasured) {
  Rng rng(404);
  double worst = 0.0, total = 0.0;
  int found = 0;
  const int trials = 12;
  for (int t = 0; t < trials; ++t) {
    const FeatureCache cache = chsurgeon::testing::random_mask_cache({6, 5, 3, 3}, rng.next());
    const SegmentationScorer scorer(chsurgeon::testing::random_seg_head(5, rng));
    SearchConfig config;
    config.top_n = 4;
    const SearchResult r = run_search(cache, scorer, config);
    const auto exhaustive = fixtures::brute_force_best(cache, scorer, edits_of(select_top_n(r.table, 20)), 3);
    ASSERT_GE(exhaustive.score, r.best_score);
    const double gap = exhaustive.score - r.best_score;
    worst = std::max(worst, gap);
    total += gap;
    found += gap == 0.0;
  }
  RecordProperty("exhaustive_matches", found);
  RecordProperty("worst_gap", std::to_string(worst));
  RecordProperty("mean_gap", std::to_string(total / trials));
  std::cout << "[ gap      ] exhaustive optimum matched " << found << "/" << trials << ", worst gap " << worst
            << ", mean gap " << total / trials << "\n";
}
