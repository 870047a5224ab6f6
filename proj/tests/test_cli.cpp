#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "chsurgeon/cli.hpp"
#include "test_support.hpp"

using namespace chsurgeon;
using chsurgeon::testing::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json json_file(const std::filesystem::path& p) { return nlohmann::json::parse(detail::read_file(p)); }

// Emits a 12-channel, 20-image fixture with two planted pairs.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const Outcome r = run({"fixtures", "emit", "--out", dir.path().string(), "--images", "20", "--channels", "12",
                       "--planted", "7:2:2.0", "--planted", "4:10:2.0", "--seed", "9"});
    ASSERT_EQ(r.code, 0) << r.err;
    cache = (dir / "cache.featc").string();
    head = (dir / "head.json").string();
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write_plan(const std::string& name, const std::string& json) const { detail::write_file(dir / name, json); }

  TempDir dir;
  std::string cache, head;
};

}  // namespace

TEST_F(CliTest, FixtureEmitReportsExpectedPlan) {
  const auto expected = json_file(dir / "expected.json");
  EXPECT_EQ(expected["edits"].size(), 2u);
  EXPECT_EQ(expected["channels"], 12);
  EXPECT_GT(expected["expected_margin"].get<double>(), 0.0);
}

TEST_F(CliTest, SweepWritesEveryOrderedPair) {
  const Outcome r = run({"sweep", "--cache", cache, "--head", head, "--out", path("sweep.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = json_file(dir / "sweep.json");
  EXPECT_EQ(table["entries"].size(), 132u);
  EXPECT_EQ(table["scorer_calls"], 133);
  EXPECT_EQ(nlohmann::json::parse(r.out)["entries"], 132);

  const Outcome z = run({"sweep", "--cache", cache, "--head", head, "--out", path("zero.json"), "--zero-ablation"});
  ASSERT_EQ(z.code, 0) << z.err;
  const auto zero = json_file(dir / "zero.json");
  ASSERT_EQ(zero["entries"].size(), 12u);
  EXPECT_EQ(zero["entries"][0]["op"], "zero");
  EXPECT_EQ(zero["entries"][0]["j"], -1);
}

TEST_F(CliTest, SearchRecoversFixtureAndWritesCurve) {
  const Outcome r = run({"search", "--cache", cache, "--head", head, "--out", path("result.json"), "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto result = json_file(dir / "result.json");
  const auto expected = json_file(dir / "expected.json");
  EXPECT_EQ(result["best_plan"], plan_to_json(plan_from_json(expected).plan, 12));
  EXPECT_NEAR(result["best_score"].get<double>() - result["baseline"].get<double>(),
              expected["expected_margin"].get<double>(), 1e-9);
  EXPECT_EQ(result["seed"], 9);
  const auto summary = nlohmann::json::parse(r.out);
  EXPECT_EQ(summary["scorer_calls"]["sweep"], 132);
  EXPECT_EQ(summary["nominal_calls"], 144 + 1023);
  const std::string csv = detail::read_file(dir / "result.csv");
  EXPECT_EQ(csv.rfind("k,score\n1,", 0), 0u);
}

TEST_F(CliTest, SearchOutputsAreIdempotent) {
  ASSERT_EQ(run({"search", "--cache", cache, "--head", head, "--out", path("a.json"), "--jobs", "1"}).code, 0);
  ASSERT_EQ(run({"search", "--cache", cache, "--head", head, "--out", path("b.json"), "--jobs", "3"}).code, 0);
  EXPECT_EQ(detail::read_file(dir / "a.json"), detail::read_file(dir / "b.json"));
  EXPECT_EQ(detail::read_file(dir / "a.csv"), detail::read_file(dir / "b.csv"));
}

TEST_F(CliTest, SearchOnSampledImages) {
  const Outcome r = run({"search", "--cache", cache, "--head", head, "--out", path("s.json"), "--search-images", "10",
                     "--seed", "4", "--csv", path("curve.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "curve.csv"));
  EXPECT_EQ(run({"search", "--cache", cache, "--head", head, "--out", path("s.json"), "--search-images", "21"}).code, 2);
}

TEST_F(CliTest, AdapterPathMatchesBuiltinHead) {
  const std::string adapter = chsurgeon::testing::stub_command("--cache " + cache + " --head " + head);
  ASSERT_EQ(run({"search", "--cache", cache, "--head", head, "--out", path("builtin.json"), "--top-n", "4"}).code, 0);
  const Outcome r = run({"search", "--cache", cache, "--adapter", adapter, "--out", path("adapter.json"), "--top-n", "4",
                     "--jobs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(detail::read_file(dir / "builtin.json"), detail::read_file(dir / "adapter.json"));
}

TEST_F(CliTest, AdapterFailuresExitWithFour) {
  const Outcome r = run({"eval", "--cache", cache, "--adapter", chsurgeon::testing::stub_command("--channels 12 --images 20 --misbehave garbage")});
  EXPECT_EQ(r.code, 4);
  // Shape disagreement between adapter and cache.
  EXPECT_EQ(run({"eval", "--cache", cache, "--adapter", chsurgeon::testing::stub_command("--channels 5")}).code, 4);
}

TEST_F(CliTest, ApplyIdentityIsBitwiseNoOp) {
  write_plan("empty.json", R"({"channels":12,"edits":[]})");
  ASSERT_EQ(run({"apply", "--cache", cache, "--plan", path("empty.json"), "--out", path("same.featc")}).code, 0);
  EXPECT_EQ(detail::read_file(dir / "same.featc"), detail::read_file(cache));
  EXPECT_EQ(read_cache(dir / "same.featc"), read_cache(cache));
}

TEST_F(CliTest, ApplySwapExchangesChannels) {
  write_plan("swap.json", R"({"channels":12,"edits":[{"op":"replace","i":0,"j":1},{"op":"replace","i":1,"j":0}]})");
  ASSERT_EQ(run({"apply", "--cache", cache, "--plan", path("swap.json"), "--out", path("swap.featc")}).code, 0);
  const FeatureCache in = read_cache(cache), out = read_cache(dir / "swap.featc");
  for (std::size_t d = 0; d < in.images(); ++d) {
    const auto a = in.plane(d, 0), b = in.plane(d, 1);
    ASSERT_TRUE(std::equal(a.begin(), a.end(), out.plane(d, 1).begin()));
    ASSERT_TRUE(std::equal(b.begin(), b.end(), out.plane(d, 0).begin()));
  }
}

TEST_F(CliTest, PlanChannelMismatchExitsWithTwo) {
  write_plan("wide.json", R"({"channels":13,"edits":[]})");
  EXPECT_EQ(run({"apply", "--cache", cache, "--plan", path("wide.json"), "--out", path("x.featc")}).code, 2);
  EXPECT_EQ(run({"eval", "--cache", cache, "--head", head, "--plan", path("wide.json")}).code, 2);
}

TEST_F(CliTest, EvalReportsBaselineAndPlanScores) {
  ASSERT_EQ(run({"search", "--cache", cache, "--head", head, "--out", path("result.json")}).code, 0);
  const auto result = json_file(dir / "result.json");

  const Outcome base = run({"eval", "--cache", cache, "--head", head});
  ASSERT_EQ(base.code, 0) << base.err;
  const auto b = nlohmann::json::parse(base.out);
  EXPECT_EQ(b["metric"], "miou");
  EXPECT_EQ(b["per_image"].size(), 20u);
  EXPECT_EQ(b["aggregate"].get<double>(), result["baseline"].get<double>());

  detail::write_file(dir / "best.json", result["best_plan"].dump());
  const Outcome best = run({"eval", "--cache", cache, "--head", head, "--plan", path("best.json")});
  ASSERT_EQ(best.code, 0) << best.err;
  EXPECT_EQ(nlohmann::json::parse(best.out)["aggregate"].get<double>(), result["best_score"].get<double>());
}

TEST_F(CliTest, KindMismatchExitsWithTwo) {
  detail::write_file(dir / "cls.json", R"({"weights":[[1,0,0,0,0,0,0,0,0,0,0,0],[0,1,0,0,0,0,0,0,0,0,0,0]],"bias":[0,0]})");
  const Outcome r = run({"eval", "--cache", cache, "--head", path("cls.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("binary_mask"), std::string::npos) << r.err;
}

TEST_F(CliTest, ArgumentErrorsExitWithTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"search", "--cache", cache, "--head", head, "--out", path("r.json"), "--top-n", "0"}).code, 2);
  EXPECT_EQ(run({"search", "--cache", cache, "--head", head, "--out", path("r.json"), "--top-n", "21"}).code, 2);
  EXPECT_EQ(run({"eval", "--cache", cache}).code, 2);
  EXPECT_EQ(run({"eval", "--cache", cache, "--head", head, "--adapter", "x"}).code, 2);
  EXPECT_EQ(run({"fixtures", "emit", "--out", path("f"), "--planted", "1-2-3"}).code, 2);
  EXPECT_EQ(run({"fixtures", "emit", "--out", path("f"), "--planted", "1:2:1", "--channels", "4", "--planted", "0:3:1"}).code, 2);
}

TEST_F(CliTest, FileErrorsExitWithThree) {
  EXPECT_EQ(run({"sweep", "--cache", path("missing.featc"), "--head", head, "--out", path("t.json")}).code, 3);
  detail::write_file(dir / "junk.featc", "not a cache at all");
  EXPECT_EQ(run({"eval", "--cache", path("junk.featc"), "--head", head}).code, 3);
  EXPECT_EQ(run({"eval", "--cache", cache, "--head", path("nohead.json")}).code, 3);
  EXPECT_EQ(run({"sweep", "--cache", cache, "--head", head, "--out", path("no/such/dir/t.json")}).code, 3);
}
