#pragma once

// Synthetic caches with planted redundant/effective channel pairs, and a
// naive exhaustive oracle for the restricted combination search.
//
// Per image, the GT mask is a random ellipse and s = +1 (foreground) / -1.
// For planted pair p with corruption sigma_p:
//   effective  e_p = s + a*n + u_p        head weight eps
//   redundant  r_p = e_p + sigma_p*g      head weight w_p = 1 + p/2
//   balance    b_p = -(w_p + eps) * u_p   head weight 1
// where n, g are unit Gaussian fields and u_p is a Gaussian nuisance field of
// amplitude `nuisance`. In the unedited logit the nuisance cancels and
// r_p contributes w_p*sigma_p*g; replacing r_p by e_p removes that noise,
// while replacing r_p by any other channel leaves an uncancelled nuisance.
// Distinct w_p keep cross assignments (r_p <- e_q, r_q <- e_p) from
// cancelling too. The remaining channels carry unit noise and have head
// weight 0.
//
// With the defaults, sigma in [2, 2.25] is recovered exactly by the default
// search on 16-channel, 50-image, 8x8 caches with up to three pairs; small
// sigma saturates the metric after fewer edits, large sigma buries single
// fixes under the other pairs' noise in the sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "chsurgeon/error.hpp"
#include "chsurgeon/feature_store.hpp"
#include "chsurgeon/remap.hpp"
#include "chsurgeon/rng.hpp"
#include "chsurgeon/scorer.hpp"

namespace chsurgeon::fixtures {

struct PlantedPair {
  std::size_t redundant = 0;
  std::size_t effective = 0;
  double sigma = 0.0;
};

struct FixtureSpec {
  Dims dims{50, 16, 8, 8};
  std::vector<PlantedPair> planted;
  std::uint64_t seed = 0;
  double nuisance = 2.0;
  double effective_weight = 0.25;
  double signal_noise = 0.1;
  std::optional<LinearSegHead> head;  // overrides the constructed head
};

struct Fixture {
  FeatureCache cache;
  LinearSegHead head;
  ChannelPlan expected_best;
  double expected_margin = 0.0;
  std::vector<std::size_t> balance_channels;
};

inline double redundant_weight(std::size_t pair_index) { return 1.0 + 0.5 * static_cast<double>(pair_index); }

inline void validate(const FixtureSpec& spec) {
  const Dims& d = spec.dims;
  if (d.images < 1 || d.channels < 2 || d.rows < 1 || d.cols < 1) fail(ErrorCode::spec_invalid, "bad dims");
  std::set<std::size_t> used;
  for (const auto& p : spec.planted) {
    if (p.redundant >= d.channels || p.effective >= d.channels) {
      fail(ErrorCode::spec_invalid, "planted channel out of range");
    }
    if (!std::isfinite(p.sigma) || p.sigma < 0.0) fail(ErrorCode::spec_invalid, "sigma must be finite and >= 0");
    if (!used.insert(p.redundant).second || !used.insert(p.effective).second) {
      fail(ErrorCode::spec_invalid, "planted channels must be distinct");
    }
  }
  const std::size_t needed = spec.planted.size() * (spec.nuisance > 0.0 ? 3 : 2);
  if (needed > d.channels) {
    fail(ErrorCode::spec_invalid, "need " + std::to_string(needed) + " channels for the planted pairs");
  }
  if (!std::isfinite(spec.nuisance) || spec.nuisance < 0.0 || !(spec.effective_weight > 0.0) ||
      !std::isfinite(spec.signal_noise) || spec.signal_noise < 0.0) {
    fail(ErrorCode::spec_invalid, "nuisance, effective_weight and signal_noise must be finite, weight > 0");
  }
  if (spec.head && spec.head->weights.size() != d.channels) {
    fail(ErrorCode::spec_invalid, "head override has wrong length");
  }
}

inline Fixture generate(const FixtureSpec& spec) {
  validate(spec);
  const Dims& dims = spec.dims;
  const std::size_t plane = dims.plane();
  Rng rng(spec.seed);

  // Balance channels: lowest indices not taken by planted pairs.
  std::vector<std::size_t> balance;
  if (spec.nuisance > 0.0) {
    std::vector<bool> taken(dims.channels, false);
    for (const auto& p : spec.planted) taken[p.redundant] = taken[p.effective] = true;
    for (std::size_t c = 0; c < dims.channels && balance.size() < spec.planted.size(); ++c) {
      if (!taken[c]) balance.push_back(c);
    }
  }

  LinearSegHead head;
  head.weights.assign(dims.channels, 0.0);
  for (std::size_t p = 0; p < spec.planted.size(); ++p) {
    head.weights[spec.planted[p].redundant] = redundant_weight(p);
    head.weights[spec.planted[p].effective] = spec.effective_weight;
    if (!balance.empty()) head.weights[balance[p]] = 1.0;
  }
  if (spec.head) head = *spec.head;

  std::vector<ImageRecord> manifest;
  std::vector<float> data(dims.total(), 0.0f);
  std::vector<double> signal(plane), nuisance(plane), effective(plane);
  for (std::size_t d = 0; d < dims.images; ++d) {
    const double cy = rng.uniform01() * static_cast<double>(dims.rows);
    const double cx = rng.uniform01() * static_cast<double>(dims.cols);
    const double ry = std::max(0.5, (0.2 + 0.3 * rng.uniform01()) * static_cast<double>(dims.rows));
    const double rx = std::max(0.5, (0.2 + 0.3 * rng.uniform01()) * static_cast<double>(dims.cols));
    BinaryMask mask;
    mask.pixels.resize(plane);
    for (std::size_t h = 0; h < dims.rows; ++h) {
      for (std::size_t w = 0; w < dims.cols; ++w) {
        const double y = (static_cast<double>(h) + 0.5 - cy) / ry;
        const double x = (static_cast<double>(w) + 0.5 - cx) / rx;
        mask.pixels[h * dims.cols + w] = (y * y + x * x <= 1.0) ? 1 : 0;
      }
    }
    const std::size_t centre = std::min<std::size_t>(static_cast<std::size_t>(cy), dims.rows - 1) * dims.cols +
                               std::min<std::size_t>(static_cast<std::size_t>(cx), dims.cols - 1);
    mask.pixels[centre] = 1;
    for (std::size_t k = 0; k < plane; ++k) signal[k] = mask.pixels[k] ? 1.0 : -1.0;

    auto channel = [&](std::size_t c) {
      return std::span<float>(data).subspan(d * dims.image_stride() + c * plane, plane);
    };
    std::vector<bool> filled(dims.channels, false);
    for (std::size_t p = 0; p < spec.planted.size(); ++p) {
      const PlantedPair& pair = spec.planted[p];
      for (std::size_t k = 0; k < plane; ++k) nuisance[k] = spec.nuisance > 0.0 ? spec.nuisance * rng.gaussian() : 0.0;
      auto eff = channel(pair.effective);
      auto red = channel(pair.redundant);
      for (std::size_t k = 0; k < plane; ++k) {
        effective[k] = signal[k] + spec.signal_noise * rng.gaussian() + nuisance[k];
        eff[k] = static_cast<float>(effective[k]);
      }
      for (std::size_t k = 0; k < plane; ++k) {
        const double noise = rng.gaussian();
        red[k] = pair.sigma == 0.0 ? eff[k] : static_cast<float>(effective[k] + pair.sigma * noise);
      }
      filled[pair.effective] = filled[pair.redundant] = true;
      if (!balance.empty()) {
        auto bal = channel(balance[p]);
        for (std::size_t k = 0; k < plane; ++k) {
          bal[k] = static_cast<float>(-(redundant_weight(p) + spec.effective_weight) * nuisance[k]);
        }
        filled[balance[p]] = true;
      }
    }
    for (std::size_t c = 0; c < dims.channels; ++c) {
      if (filled[c]) continue;
      auto ch = channel(c);
      for (std::size_t k = 0; k < plane; ++k) ch[k] = static_cast<float>(rng.gaussian());
    }
    manifest.push_back({"img" + std::to_string(d), std::move(mask)});
  }

  std::vector<ChannelEdit> edits;
  for (const auto& p : spec.planted) edits.push_back(ChannelEdit::replace(p.redundant, p.effective));
  Fixture fixture{FeatureCache(dims, std::move(data), std::move(manifest)), head, ChannelPlan(std::move(edits)), 0.0,
                  balance};
  const SegmentationScorer scorer(fixture.head);
  const double base = scorer.score(fixture.cache, ChannelMap::identity(dims.channels)).aggregate;
  const double planted = scorer.score(fixture.cache, plan_to_map(fixture.expected_best, dims.channels)).aggregate;
  fixture.expected_margin = planted - base;
  return fixture;
}

struct BruteForceResult {
  ChannelPlan plan;
  double score = 0.0;
};

namespace detail {

// (source, target) with Zero sorting after every real target.
inline std::pair<std::size_t, std::int64_t> edit_key(const ChannelEdit& e) {
  return {e.source(), e.is_zero() ? INT64_MAX : static_cast<std::int64_t>(e.target())};
}

inline bool naive_less(std::vector<ChannelEdit> a, std::vector<ChannelEdit> b) {
  auto by_key = [](const ChannelEdit& x, const ChannelEdit& y) { return edit_key(x) < edit_key(y); };
  std::sort(a.begin(), a.end(), by_key);
  std::sort(b.begin(), b.end(), by_key);
  for (std::size_t k = 0; k < a.size() && k < b.size(); ++k) {
    if (edit_key(a[k]) != edit_key(b[k])) return edit_key(a[k]) < edit_key(b[k]);
  }
  return a.size() < b.size();
}

}  // namespace detail

// Exhaustive reference for the combination phase: tries every subset of
// `candidates` with at most `max_size` edits and distinct sources.
inline BruteForceResult brute_force_best(const FeatureCache& cache, const Scorer& scorer,
                                         const std::vector<ChannelEdit>& candidates, std::size_t max_size,
                                         ImageSubset subset = {}) {
  if (candidates.size() > 20) fail(ErrorCode::too_many_candidates, "at most 20 candidates");
  const std::size_t channels = cache.channels();

  std::vector<std::int64_t> identity(channels);
  for (std::size_t c = 0; c < channels; ++c) identity[c] = static_cast<std::int64_t>(c);

  double best_score = scorer.score(cache, ChannelMap::from_entries(identity), subset).aggregate;
  std::vector<ChannelEdit> best;

  std::vector<ChannelEdit> current;
  auto visit = [&](auto&& self, std::size_t next) -> void {
    if (!current.empty()) {
      std::vector<std::int64_t> entries = identity;
      for (const ChannelEdit& e : current) entries[e.source()] = e.is_zero() ? -1 : static_cast<std::int64_t>(e.target());
      const double s = scorer.score(cache, ChannelMap::from_entries(entries), subset).aggregate;
      bool take = false;
      if (s > best_score) {
        take = true;
      } else if (s == best_score) {
        if (current.size() < best.size()) take = true;
        else if (current.size() == best.size() && detail::naive_less(current, best)) take = true;
      }
      if (take) {
        best_score = s;
        best = current;
      }
    }
    if (current.size() == max_size) return;
    for (std::size_t k = next; k < candidates.size(); ++k) {
      bool clash = false;
      for (const ChannelEdit& e : current) clash = clash || e.source() == candidates[k].source();
      if (clash) continue;
      current.push_back(candidates[k]);
      self(self, k + 1);
      current.pop_back();
    }
  };
  visit(visit, 0);
  return {ChannelPlan(best), best_score};
}

// Writes cache.featc (+ manifest and masks), head.json and expected.json.
inline void emit(const Fixture& fixture, const std::filesystem::path& dir, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io_failure, "cannot create " + dir.string() + ": " + ec.message());
  write_cache(fixture.cache, dir / "cache.featc");
  chsurgeon::detail::write_file(dir / "head.json", head_to_json(fixture.head).dump(2) + "\n");
  nlohmann::json expected = plan_to_json(fixture.expected_best, fixture.cache.channels());
  expected["expected_margin"] = fixture.expected_margin;
  expected["seed"] = seed;
  chsurgeon::detail::write_file(dir / "expected.json", expected.dump(2) + "\n");
}

}  // namespace chsurgeon::fixtures
