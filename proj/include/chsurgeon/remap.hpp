#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "chsurgeon/error.hpp"
#include "chsurgeon/feature_store.hpp"

namespace chsurgeon {

// Replace(source, target) copies channel `target` into channel `source`;
// Zero(source) clears channel `source`.
class ChannelEdit {
 public:
  static constexpr std::int64_t kZero = -1;

  static ChannelEdit replace(std::size_t source, std::size_t target) {
    return ChannelEdit(source, static_cast<std::int64_t>(target));
  }
  static ChannelEdit zero(std::size_t source) { return ChannelEdit(source, kZero); }

  std::size_t source() const { return source_; }
  bool is_zero() const { return target_ == kZero; }
  std::size_t target() const { return static_cast<std::size_t>(target_); }
  // Wire form of the target: channel index, or -1 for Zero.
  std::int64_t wire_target() const { return target_; }

  // (source asc, then Replace targets asc, then Zero).
  friend std::strong_ordering operator<=>(const ChannelEdit& a, const ChannelEdit& b) {
    if (auto c = a.source_ <=> b.source_; c != 0) return c;
    return a.sort_target() <=> b.sort_target();
  }
  friend bool operator==(const ChannelEdit&, const ChannelEdit&) = default;

  std::string to_string() const {
    return is_zero() ? "zero(" + std::to_string(source_) + ")"
                     : std::to_string(source_) + "->" + std::to_string(target_);
  }

 private:
  ChannelEdit(std::size_t source, std::int64_t target) : source_(source), target_(target) {}

  std::int64_t sort_target() const { return is_zero() ? std::numeric_limits<std::int64_t>::max() : target_; }

  std::size_t source_;
  std::int64_t target_;
};

// Set of edits with pairwise-distinct sources, kept sorted by source.
class ChannelPlan {
 public:
  ChannelPlan() = default;

  explicit ChannelPlan(std::vector<ChannelEdit> edits) : edits_(std::move(edits)) {
    std::sort(edits_.begin(), edits_.end());
    for (std::size_t k = 0; k < edits_.size(); ++k) {
      const ChannelEdit& e = edits_[k];
      if (!e.is_zero() && e.target() == e.source()) {
        fail(ErrorCode::invariant_violation, "identity pair " + e.to_string() + " is not a valid edit");
      }
      if (k > 0 && edits_[k - 1].source() == e.source()) {
        fail(ErrorCode::duplicate_source, "channel " + std::to_string(e.source()) + " is edited twice");
      }
    }
  }

  const std::vector<ChannelEdit>& edits() const { return edits_; }
  std::size_t size() const { return edits_.size(); }
  bool empty() const { return edits_.empty(); }

  friend bool operator==(const ChannelPlan&, const ChannelPlan&) = default;
  // Lexicographic over the canonical edit list.
  friend auto operator<=>(const ChannelPlan& a, const ChannelPlan& b) {
    return std::lexicographical_compare_three_way(a.edits_.begin(), a.edits_.end(), b.edits_.begin(),
                                                  b.edits_.end());
  }

 private:
  std::vector<ChannelEdit> edits_;
};

// m(c) for every output channel; kZero marks a cleared channel.
class ChannelMap {
 public:
  static constexpr std::int64_t kZero = ChannelEdit::kZero;

  static ChannelMap identity(std::size_t channels) {
    ChannelMap m;
    m.entries_.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) m.entries_[c] = static_cast<std::int64_t>(c);
    return m;
  }

  // Accepts wire-form entries without checking them; callers validate ranges.
  static ChannelMap from_entries(std::vector<std::int64_t> entries) {
    ChannelMap m;
    m.entries_ = std::move(entries);
    return m;
  }

  std::size_t size() const { return entries_.size(); }
  std::int64_t operator[](std::size_t c) const { return entries_[c]; }
  const std::vector<std::int64_t>& entries() const { return entries_; }

  bool is_identity() const {
    for (std::size_t c = 0; c < entries_.size(); ++c) {
      if (entries_[c] != static_cast<std::int64_t>(c)) return false;
    }
    return true;
  }

  friend bool operator==(const ChannelMap&, const ChannelMap&) = default;

 private:
  std::vector<std::int64_t> entries_;
};

inline ChannelMap plan_to_map(const ChannelPlan& plan, std::size_t channels) {
  std::vector<std::int64_t> entries(channels);
  for (std::size_t c = 0; c < channels; ++c) entries[c] = static_cast<std::int64_t>(c);
  std::vector<bool> seen(channels, false);
  for (const ChannelEdit& e : plan.edits()) {
    if (e.source() >= channels || (!e.is_zero() && e.target() >= channels)) {
      fail(ErrorCode::index_out_of_range, "edit " + e.to_string() + " outside C = " + std::to_string(channels));
    }
    if (seen[e.source()]) fail(ErrorCode::duplicate_source, "channel " + std::to_string(e.source()) + " edited twice");
    seen[e.source()] = true;
    entries[e.source()] = e.wire_target();
  }
  return ChannelMap::from_entries(std::move(entries));
}

inline void check_map(const ChannelMap& map, std::size_t channels) {
  if (map.size() != channels) {
    fail(ErrorCode::length_mismatch,
         "channel map has " + std::to_string(map.size()) + " entries, cache has C = " + std::to_string(channels));
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (map[c] != ChannelMap::kZero && (map[c] < 0 || map[c] >= static_cast<std::int64_t>(channels))) {
      fail(ErrorCode::index_out_of_range, "map entry " + std::to_string(map[c]) + " at channel " + std::to_string(c));
    }
  }
}

// X'[d][c] = X[d][m(c)], every read taken from the original tensor.
inline FeatureCache apply_map(const FeatureCache& cache, const ChannelMap& map) {
  const Dims& dims = cache.dims();
  check_map(map, dims.channels);
  std::vector<float> out(dims.total(), 0.0f);
  for (std::size_t d = 0; d < dims.images; ++d) {
    for (std::size_t c = 0; c < dims.channels; ++c) {
      if (map[c] == ChannelMap::kZero) continue;
      const auto src = cache.plane(d, static_cast<std::size_t>(map[c]));
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(d * dims.image_stride() + c * dims.plane()));
    }
  }
  return FeatureCache(dims, std::move(out), cache.manifest());
}

// Plan file: {"channels":C,"edits":[{"op":"replace","i":..,"j":..}|{"op":"zero","i":..}]}
inline nlohmann::json edit_to_json(const ChannelEdit& e) {
  nlohmann::json j;
  if (e.is_zero()) {
    j["op"] = "zero";
    j["i"] = e.source();
  } else {
    j["op"] = "replace";
    j["i"] = e.source();
    j["j"] = e.target();
  }
  return j;
}

inline nlohmann::json plan_to_json(const ChannelPlan& plan, std::size_t channels) {
  nlohmann::json edits = nlohmann::json::array();
  for (const auto& e : plan.edits()) edits.push_back(edit_to_json(e));
  return nlohmann::json{{"channels", channels}, {"edits", std::move(edits)}};
}

struct PlanFile {
  std::size_t channels = 0;
  ChannelPlan plan;
};

inline PlanFile plan_from_json(const nlohmann::json& j) {
  try {
    PlanFile file;
    const auto channels = j.at("channels").get<std::int64_t>();
    if (channels < 2) fail(ErrorCode::invalid_argument, "plan channels must be >= 2");
    file.channels = static_cast<std::size_t>(channels);
    std::vector<ChannelEdit> edits;
    for (const auto& e : j.at("edits")) {
      const auto op = e.at("op").get<std::string>();
      const auto i = e.at("i").get<std::int64_t>();
      if (i < 0) fail(ErrorCode::index_out_of_range, "negative source index");
      if (op == "replace") {
        const auto t = e.at("j").get<std::int64_t>();
        if (t < 0) fail(ErrorCode::index_out_of_range, "negative target index");
        edits.push_back(ChannelEdit::replace(static_cast<std::size_t>(i), static_cast<std::size_t>(t)));
      } else if (op == "zero") {
        edits.push_back(ChannelEdit::zero(static_cast<std::size_t>(i)));
      } else {
        fail(ErrorCode::invalid_argument, "unknown edit op '" + op + "'");
      }
    }
    file.plan = ChannelPlan(std::move(edits));
    plan_to_map(file.plan, file.channels);  // range check
    return file;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed plan: ") + e.what());
  }
}

}  // namespace chsurgeon
