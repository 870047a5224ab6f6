#pragma once

// chsurgeon command line: sweep, search, apply, eval, fixtures emit.
// Exit codes: 0 success, 2 bad arguments or incompatible inputs, 3 I/O or
// file-format failure, 4 scorer/adapter protocol failure. stdout carries only
// JSON; logs go to stderr (level from CHSURGEON_LOG).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "chsurgeon/error.hpp"
#include "chsurgeon/external_scorer.hpp"
#include "chsurgeon/feature_store.hpp"
#include "chsurgeon/fixtures.hpp"
#include "chsurgeon/remap.hpp"
#include "chsurgeon/scorer.hpp"
#include "chsurgeon/search.hpp"

namespace chsurgeon::cli {

enum ExitCode : int { kOk = 0, kBadArgs = 2, kIo = 3, kScorer = 4 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::io_failure:
    case ErrorCode::bad_magic:
    case ErrorCode::truncated_payload:
    case ErrorCode::dtype_unsupported:
    case ErrorCode::manifest_mismatch:
      return kIo;
    case ErrorCode::protocol_violation:
    case ErrorCode::adapter_crash:
    case ErrorCode::timeout:
      return kScorer;
    default:
      return kBadArgs;
  }
}

// Raised for failures whose exit code is fixed by where they happened
// rather than by their error code (e.g. any defect inside an input file).
struct StageError {
  int exit_code;
  std::string message;
};

inline std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> log = [] {
    auto l = std::make_shared<spdlog::logger>("chsurgeon", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%l] %v");
    const char* level = std::getenv("CHSURGEON_LOG");
    l->set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
    return l;
  }();
  return log;
}

struct Options {
  std::string cache;
  std::string head;
  std::string adapter;
  std::string out;
  std::string csv;
  std::string plan;
  std::string eval_cache;
  std::size_t top_n = 10;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  std::size_t search_images = 0;
  bool zero_ablation = false;
  bool allow_zero_edits = false;
  double depth_floor = DepthScorer::kDefaultFloor;
  double timeout_s = 300.0;

  // fixtures emit
  Dims fixture_dims{50, 16, 8, 8};
  std::vector<std::string> planted;
  double nuisance = 2.0;
};

inline FeatureCache load_cache(const std::string& path) {
  if (path.empty()) throw StageError{kBadArgs, "--cache is required"};
  try {
    return read_cache(path);
  } catch (const Error& e) {
    throw StageError{kIo, std::string("cannot load cache '") + path + "': " + e.what()};
  }
}

inline std::string read_text(const std::string& path, const char* what) {
  try {
    return chsurgeon::detail::read_file(path);
  } catch (const Error& e) {
    throw StageError{kIo, std::string("cannot read ") + what + ": " + e.what()};
  }
}

inline nlohmann::json read_json(const std::string& path, const char* what) {
  try {
    return nlohmann::json::parse(read_text(path, what));
  } catch (const nlohmann::json::exception& e) {
    throw StageError{kBadArgs, std::string(what) + " is not valid JSON: " + e.what()};
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  try {
    chsurgeon::detail::write_file(path, text);
  } catch (const Error& e) {
    throw StageError{kIo, e.what()};
  }
}

inline std::unique_ptr<Scorer> make_scorer(const Options& o, const FeatureCache& cache) {
  if (o.head.empty() == o.adapter.empty()) throw StageError{kBadArgs, "exactly one of --head or --adapter is required"};
  if (!o.head.empty()) {
    const HeadFile head = parse_head(read_json(o.head, "head file"));
    return make_builtin_scorer(head, cache, o.depth_floor);
  }
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(o.timeout_s * 1000.0));
  auto scorer = std::make_unique<ExternalScorer>(o.adapter, o.jobs, timeout);
  scorer->check_compatible(cache);
  logger()->info("adapter ready: C={} D={} metric={}", scorer->info().channels, scorer->info().images,
                 scorer->info().metric);
  return scorer;
}

inline SearchConfig make_config(const Options& o) {
  SearchConfig config;
  config.top_n = o.top_n;
  config.jobs = o.jobs;
  config.seed = o.seed;
  config.allow_zero_edits = o.allow_zero_edits;
  config.validate();
  return config;
}

inline FeatureCache search_dataset(const Options& o, FeatureCache cache) {
  if (o.search_images == 0 || o.search_images == cache.images()) return cache;
  logger()->info("sampling {} of {} images (seed {})", o.search_images, cache.images(), o.seed);
  return subsample(cache, o.search_images, o.seed);
}

inline int cmd_sweep(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw StageError{kBadArgs, "--out is required"};
  const SearchConfig config = make_config(o);
  const FeatureCache cache = search_dataset(o, load_cache(o.cache));
  const auto scorer = make_scorer(o, cache);
  const PairSweepTable table =
      o.zero_ablation ? zero_ablation_sweep(cache, *scorer, o.jobs) : pair_sweep(cache, *scorer, config);
  write_text(o.out, table_to_json(table, cache.channels(), o.seed).dump(2) + "\n");
  out << nlohmann::json{{"baseline", table.baseline},
                        {"entries", table.entries.size()},
                        {"scorer_calls", table.scorer_calls}}
             .dump()
      << "\n";
  return kOk;
}

inline int cmd_search(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw StageError{kBadArgs, "--out is required"};
  const SearchConfig config = make_config(o);
  const FeatureCache cache = search_dataset(o, load_cache(o.cache));
  std::optional<FeatureCache> eval_cache;
  if (!o.eval_cache.empty()) {
    if (!o.adapter.empty()) throw StageError{kBadArgs, "--eval-cache cannot be combined with --adapter"};
    eval_cache = load_cache(o.eval_cache);
  }
  const auto scorer = make_scorer(o, cache);
  logger()->info("sweeping {} channels, top-n {}", cache.channels(), config.top_n);
  const SearchResult result = run_search(cache, *scorer, config, eval_cache ? &*eval_cache : nullptr);
  write_text(o.out, search_result_to_json(result).dump(2) + "\n");
  std::string csv = o.csv;
  if (csv.empty()) csv = std::filesystem::path(o.out).replace_extension(".csv").string();
  write_text(csv, per_size_csv(result));
  out << nlohmann::json{{"baseline", result.baseline},
                        {"best_score", result.best_score},
                        {"best_plan", plan_to_json(result.best_plan, result.channels)},
                        {"scorer_calls",
                         {{"baseline", result.scorer_calls.baseline},
                          {"sweep", result.scorer_calls.sweep},
                          {"combos", result.scorer_calls.combos},
                          {"total", result.scorer_calls.total()}}},
                        {"nominal_calls", nominal_call_count(result.channels, result.top_n.pairs.size())}}
             .dump()
      << "\n";
  return kOk;
}

inline PlanFile load_plan(const std::string& path, std::size_t channels) {
  PlanFile plan = plan_from_json(read_json(path, "plan file"));
  if (plan.channels != channels) {
    throw StageError{kBadArgs, "plan is for C=" + std::to_string(plan.channels) + ", cache has C=" +
                                   std::to_string(channels)};
  }
  return plan;
}

inline int cmd_apply(const Options& o, std::ostream&) {
  if (o.out.empty() || o.plan.empty()) throw StageError{kBadArgs, "--plan and --out are required"};
  const FeatureCache cache = load_cache(o.cache);
  const PlanFile plan = load_plan(o.plan, cache.channels());
  const FeatureCache remapped = apply_map(cache, plan_to_map(plan.plan, cache.channels()));
  try {
    write_cache(remapped, o.out);
  } catch (const Error& e) {
    throw StageError{kIo, e.what()};
  }
  return kOk;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  const FeatureCache cache = load_cache(o.cache);
  ChannelMap map = ChannelMap::identity(cache.channels());
  if (!o.plan.empty()) map = plan_to_map(load_plan(o.plan, cache.channels()).plan, cache.channels());
  const auto scorer = make_scorer(o, cache);
  const ScoreResult r = scorer->score(cache, map);
  nlohmann::json j{{"metric", scorer->metric()}, {"aggregate", r.aggregate}, {"per_image", r.per_image}};
  if (!r.auxiliary.empty()) j["auxiliary"] = r.auxiliary;
  out << j.dump() << "\n";
  return kOk;
}

inline fixtures::PlantedPair parse_planted(const std::string& text) {
  fixtures::PlantedPair p;
  std::istringstream in(text);
  char c1 = 0, c2 = 0;
  if (!(in >> p.redundant >> c1 >> p.effective >> c2 >> p.sigma) || c1 != ':' || c2 != ':' || !in.eof()) {
    throw StageError{kBadArgs, "--planted expects redundant:effective:sigma, got '" + text + "'"};
  }
  return p;
}

inline int cmd_fixtures_emit(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw StageError{kBadArgs, "--out is required"};
  fixtures::FixtureSpec spec;
  spec.dims = o.fixture_dims;
  spec.seed = o.seed;
  spec.nuisance = o.nuisance;
  for (const auto& text : o.planted) spec.planted.push_back(parse_planted(text));
  const fixtures::Fixture fixture = fixtures::generate(spec);
  try {
    fixtures::emit(fixture, o.out, o.seed);
  } catch (const Error& e) {
    throw StageError{kIo, e.what()};
  }
  out << nlohmann::json{{"dir", o.out},
                        {"expected_plan", plan_to_json(fixture.expected_best, spec.dims.channels)},
                        {"expected_margin", fixture.expected_margin}}
             .dump()
      << "\n";
  return kOk;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Parameter-free channel replacement search over cached encoder features", "chsurgeon"};
  app.require_subcommand(1);
  Options o;

  auto add_scorer = [&](CLI::App* cmd) {
    auto* head = cmd->add_option("--head", o.head, "Linear head weights (JSON)");
    auto* adapter = cmd->add_option("--adapter", o.adapter, "External scorer command (run via /bin/sh)");
    head->excludes(adapter);
    cmd->add_option("--depth-floor", o.depth_floor, "Positive floor applied to depth predictions");
    cmd->add_option("--timeout", o.timeout_s, "Adapter per-request timeout in seconds");
    cmd->add_option("--jobs", o.jobs, "Worker count")->check(CLI::PositiveNumber);
  };

  auto* sweep = app.add_subcommand("sweep", "Score every single channel edit against the baseline");
  sweep->add_option("--cache", o.cache, "Feature cache (FEATC01)")->required();
  sweep->add_option("--out", o.out, "Output sweep table (JSON)")->required();
  sweep->add_flag("--zero-ablation", o.zero_ablation, "Sweep Zero(i) edits instead of replacement pairs");
  sweep->add_option("--seed", o.seed, "Seed for search-image sampling");
  sweep->add_option("--search-images", o.search_images, "Sample this many images before sweeping");
  add_scorer(sweep);

  auto* search = app.add_subcommand("search", "Run the two-phase replacement search");
  search->add_option("--cache", o.cache, "Feature cache (FEATC01)")->required();
  search->add_option("--out", o.out, "Output search result (JSON)")->required();
  search->add_option("--csv", o.csv, "Per-size curve CSV (default: --out with .csv extension)");
  search->add_option("--top-n", o.top_n, "Size of the top-N candidate set (1..20)");
  search->add_option("--seed", o.seed, "Seed for search-image sampling");
  search->add_option("--search-images", o.search_images, "Sample this many images before searching");
  search->add_option("--eval-cache", o.eval_cache, "Separate cache for the combination phase");
  search->add_flag("--allow-zero-edits", o.allow_zero_edits, "Include Zero(i) edits in the sweep");
  add_scorer(search);

  auto* apply = app.add_subcommand("apply", "Write the remapped cache for a plan");
  apply->add_option("--cache", o.cache, "Feature cache (FEATC01)")->required();
  apply->add_option("--plan", o.plan, "Plan file (JSON)")->required();
  apply->add_option("--out", o.out, "Output cache path")->required();

  auto* eval = app.add_subcommand("eval", "Score a cache, optionally under a plan");
  eval->add_option("--cache", o.cache, "Feature cache (FEATC01)")->required();
  eval->add_option("--plan", o.plan, "Plan file (JSON)");
  add_scorer(eval);

  auto* fixtures_cmd = app.add_subcommand("fixtures", "Synthetic fixtures");
  fixtures_cmd->require_subcommand(1);
  auto* emit = fixtures_cmd->add_subcommand("emit", "Write a planted-redundancy fixture directory");
  emit->add_option("--out", o.out, "Output directory")->required();
  emit->add_option("--images", o.fixture_dims.images, "D")->check(CLI::PositiveNumber);
  emit->add_option("--channels", o.fixture_dims.channels, "C")->check(CLI::Range(2, 1 << 16));
  emit->add_option("--rows", o.fixture_dims.rows, "H")->check(CLI::PositiveNumber);
  emit->add_option("--cols", o.fixture_dims.cols, "W")->check(CLI::PositiveNumber);
  emit->add_option("--planted", o.planted, "redundant:effective:sigma (repeatable)");
  emit->add_option("--nuisance", o.nuisance, "Nuisance amplitude shared by effective and balance channels");
  emit->add_option("--seed", o.seed, "Generator seed");

  std::vector<const char*> argv{"chsurgeon"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "chsurgeon: " << e.what() << "\n";
    return kBadArgs;
  }

  try {
    if (*sweep) return cmd_sweep(o, out);
    if (*search) return cmd_search(o, out);
    if (*apply) return cmd_apply(o, out);
    if (*eval) return cmd_eval(o, out);
    return cmd_fixtures_emit(o, out);
  } catch (const StageError& e) {
    err << "chsurgeon: " << e.message << "\n";
    return e.exit_code;
  } catch (const Error& e) {
    err << "chsurgeon: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "chsurgeon: unexpected failure: " << e.what() << "\n";
    return kScorer;
  }
}

}  // namespace chsurgeon::cli
