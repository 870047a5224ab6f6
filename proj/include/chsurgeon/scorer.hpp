#pragma once

// Evaluation oracles: a Scorer maps (cached features, channel map, image
// subset) to a per-image metric and its aggregate. All aggregates are
// higher-is-better so the search has a single comparison rule.

#include <algorithm>
#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chsurgeon/error.hpp"
#include "chsurgeon/feature_store.hpp"
#include "chsurgeon/metrics.hpp"
#include "chsurgeon/remap.hpp"

namespace chsurgeon {

using ImageSubset = std::optional<std::span<const std::size_t>>;

struct ScoreResult {
  double aggregate = 0.0;
  std::vector<double> per_image;
  std::map<std::string, double> auxiliary;
};

// Implementations must be deterministic and safe to call concurrently.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual ScoreResult score(const FeatureCache& cache, const ChannelMap& map, ImageSubset subset = {}) const = 0;
  // Wire name of the aggregate: "miou", "acc" or "neg_absrel".
  virtual std::string_view metric() const = 0;
};

inline std::vector<std::size_t> resolve_subset(std::size_t images, ImageSubset subset) {
  std::vector<std::size_t> out;
  if (!subset) {
    out.resize(images);
    for (std::size_t d = 0; d < images; ++d) out[d] = d;
    return out;
  }
  if (subset->empty()) fail(ErrorCode::empty_list, "image subset is empty");
  for (std::size_t d : *subset) {
    if (d >= images) fail(ErrorCode::index_out_of_range, "image index " + std::to_string(d));
  }
  out.assign(subset->begin(), subset->end());
  return out;
}

struct LinearSegHead {
  std::vector<double> weights;
  double bias = 0.0;
};

struct LinearClsHead {
  std::vector<std::vector<double>> weights;  // K x C
  std::vector<double> bias;                  // K
};

namespace detail {

inline void check_kind(const FeatureCache& cache, std::span<const std::size_t> images, GroundTruthKind want) {
  for (std::size_t d : images) {
    if (kind_of(cache.manifest()[d].ground_truth) != want) {
      fail(ErrorCode::kind_mismatch, "image '" + cache.manifest()[d].id + "' has ground truth " +
                                         std::string(to_string(kind_of(cache.manifest()[d].ground_truth))) +
                                         ", scorer expects " + std::string(to_string(want)));
    }
  }
}

// logit[p] = bias + sum_c w[c] * X[d][m(c)][p], accumulated in channel order.
// Channels with weight exactly zero are skipped; they could only add a signed
// zero, which neither the threshold nor the depth floor can observe.
inline void linear_response(const FeatureCache& cache, const ChannelMap& map, const LinearSegHead& head,
                            std::size_t image, std::vector<double>& out) {
  const std::size_t plane = cache.dims().plane();
  out.assign(plane, head.bias);
  for (std::size_t c = 0; c < cache.channels(); ++c) {
    const double w = head.weights[c];
    if (w == 0.0) continue;
    if (map[c] == ChannelMap::kZero) {
      for (std::size_t p = 0; p < plane; ++p) out[p] += w * 0.0;
      continue;
    }
    const auto src = cache.plane(image, static_cast<std::size_t>(map[c]));
    for (std::size_t p = 0; p < plane; ++p) out[p] += w * static_cast<double>(src[p]);
  }
}

inline void check_seg_head(const LinearSegHead& head, std::size_t channels) {
  if (head.weights.size() != channels) {
    fail(ErrorCode::weight_length_mismatch, "head has " + std::to_string(head.weights.size()) +
                                                " weights, cache has C = " + std::to_string(channels));
  }
}

}  // namespace detail

// Linear per-pixel head thresholded at logit 0, scored by mean IoU.
class SegmentationScorer final : public Scorer {
 public:
  explicit SegmentationScorer(LinearSegHead head) : head_(std::move(head)) {}

  ScoreResult score(const FeatureCache& cache, const ChannelMap& map, ImageSubset subset = {}) const override {
    detail::check_seg_head(head_, cache.channels());
    check_map(map, cache.channels());
    const auto images = resolve_subset(cache.images(), subset);
    detail::check_kind(cache, images, GroundTruthKind::binary_mask);

    ScoreResult result;
    result.per_image.reserve(images.size());
    std::vector<double> logits;
    std::vector<std::uint8_t> mask(cache.dims().plane());
    for (std::size_t d : images) {
      detail::linear_response(cache, map, head_, d, logits);
      for (std::size_t p = 0; p < logits.size(); ++p) mask[p] = logits[p] > 0.0 ? 1 : 0;
      const auto& gt = std::get<BinaryMask>(cache.manifest()[d].ground_truth);
      result.per_image.push_back(metrics::iou(mask, gt.pixels));
    }
    result.aggregate = metrics::mean(result.per_image);
    return result;
  }

  std::string_view metric() const override { return "miou"; }
  const LinearSegHead& head() const { return head_; }

 private:
  LinearSegHead head_;
};

// Linear per-pixel depth regressor. Aggregate is -AbsRel (mean of the
// per-image values); MSE and delta1 are reported as auxiliary values.
class DepthScorer final : public Scorer {
 public:
  static constexpr double kDefaultFloor = 1e-3;

  explicit DepthScorer(LinearSegHead head, double floor = kDefaultFloor) : head_(std::move(head)), floor_(floor) {
    if (!(floor_ > 0.0)) fail(ErrorCode::invalid_argument, "depth floor must be positive");
  }

  ScoreResult score(const FeatureCache& cache, const ChannelMap& map, ImageSubset subset = {}) const override {
    detail::check_seg_head(head_, cache.channels());
    check_map(map, cache.channels());
    const auto images = resolve_subset(cache.images(), subset);
    detail::check_kind(cache, images, GroundTruthKind::depth_map);

    ScoreResult result;
    std::vector<double> pred, gt, mse, delta1;
    for (std::size_t d : images) {
      detail::linear_response(cache, map, head_, d, pred);
      for (double& v : pred) v = std::max(v, floor_);
      const auto& depth = std::get<DepthMap>(cache.manifest()[d].ground_truth).values;
      gt.assign(depth.begin(), depth.end());
      const auto m = metrics::depth_metrics(pred, gt);
      result.per_image.push_back(-m.abs_rel);
      mse.push_back(m.mse);
      delta1.push_back(m.delta1);
    }
    result.aggregate = metrics::mean(result.per_image);
    result.auxiliary["mse"] = metrics::mean(mse);
    result.auxiliary["delta1"] = metrics::mean(delta1);
    result.auxiliary["abs_rel"] = -result.aggregate;
    return result;
  }

  std::string_view metric() const override { return "neg_absrel"; }

 private:
  LinearSegHead head_;
  double floor_;
};

// Global-average-pooled features through a K x C linear layer; argmax with
// ties going to the smallest label.
class ClassificationScorer final : public Scorer {
 public:
  explicit ClassificationScorer(LinearClsHead head) : head_(std::move(head)) {
    if (head_.weights.size() < 2) fail(ErrorCode::invalid_argument, "classification head needs K >= 2");
    if (head_.bias.size() != head_.weights.size()) {
      fail(ErrorCode::weight_length_mismatch, "classification bias length != K");
    }
    for (const auto& row : head_.weights) {
      if (row.size() != head_.weights.front().size()) {
        fail(ErrorCode::weight_length_mismatch, "classification weight rows differ in length");
      }
    }
  }

  ScoreResult score(const FeatureCache& cache, const ChannelMap& map, ImageSubset subset = {}) const override {
    const std::size_t channels = cache.channels();
    if (head_.weights.front().size() != channels) {
      fail(ErrorCode::weight_length_mismatch, "head has " + std::to_string(head_.weights.front().size()) +
                                                  " columns, cache has C = " + std::to_string(channels));
    }
    check_map(map, channels);
    const auto images = resolve_subset(cache.images(), subset);
    detail::check_kind(cache, images, GroundTruthKind::class_label);

    const std::size_t classes = head_.weights.size();
    const std::size_t plane = cache.dims().plane();
    ScoreResult result;
    std::vector<std::int64_t> predicted, truth;
    std::vector<double> pooled(channels);
    for (std::size_t d : images) {
      const auto label = std::get<ClassLabel>(cache.manifest()[d].ground_truth).label;
      if (label >= static_cast<std::int64_t>(classes)) {
        fail(ErrorCode::index_out_of_range, "label " + std::to_string(label) + " not below K = " +
                                                std::to_string(classes));
      }
      for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        if (map[c] != ChannelMap::kZero) {
          for (float v : cache.plane(d, static_cast<std::size_t>(map[c]))) sum += static_cast<double>(v);
        }
        pooled[c] = sum / static_cast<double>(plane);
      }
      std::size_t best = 0;
      double best_logit = 0.0;
      for (std::size_t k = 0; k < classes; ++k) {
        double logit = head_.bias[k];
        for (std::size_t c = 0; c < channels; ++c) logit += head_.weights[k][c] * pooled[c];
        if (k == 0 || logit > best_logit) {
          best = k;
          best_logit = logit;
        }
      }
      predicted.push_back(static_cast<std::int64_t>(best));
      truth.push_back(label);
      result.per_image.push_back(predicted.back() == label ? 1.0 : 0.0);
    }
    result.aggregate = metrics::top1_accuracy(predicted, truth);
    return result;
  }

  std::string_view metric() const override { return "acc"; }

 private:
  LinearClsHead head_;
};

// Counts invocations of the wrapped scorer.
class CountingScorer final : public Scorer {
 public:
  explicit CountingScorer(const Scorer& inner) : inner_(inner) {}

  ScoreResult score(const FeatureCache& cache, const ChannelMap& map, ImageSubset subset = {}) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.score(cache, map, subset);
  }

  std::string_view metric() const override { return inner_.metric(); }
  std::size_t calls() const { return calls_.load(); }

 private:
  const Scorer& inner_;
  mutable std::atomic<std::size_t> calls_{0};
};

// Head file: {"weights":[...],"bias":b} (per-pixel head) or
// {"weights":[[...],...],"bias":[...]} (classification head). An optional
// "task" field ("segmentation" | "depth" | "classification") pins the use;
// otherwise it follows the cache's ground-truth kind.
struct HeadFile {
  std::optional<std::string> task;
  std::variant<LinearSegHead, LinearClsHead> head;
};

inline HeadFile parse_head(const nlohmann::json& j) {
  try {
    HeadFile file;
    if (j.contains("task")) file.task = j.at("task").get<std::string>();
    const auto& w = j.at("weights");
    if (!w.is_array() || w.empty()) fail(ErrorCode::invalid_argument, "head weights must be a non-empty array");
    if (w.front().is_array()) {
      LinearClsHead head;
      head.weights = w.get<std::vector<std::vector<double>>>();
      head.bias = j.at("bias").get<std::vector<double>>();
      file.head = std::move(head);
    } else {
      LinearSegHead head;
      head.weights = w.get<std::vector<double>>();
      head.bias = j.value("bias", 0.0);
      file.head = std::move(head);
    }
    return file;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed head file: ") + e.what());
  }
}

inline nlohmann::json head_to_json(const LinearSegHead& head) {
  return nlohmann::json{{"weights", head.weights}, {"bias", head.bias}};
}

inline nlohmann::json head_to_json(const LinearClsHead& head) {
  return nlohmann::json{{"weights", head.weights}, {"bias", head.bias}};
}

inline std::unique_ptr<Scorer> make_builtin_scorer(const HeadFile& file, const FeatureCache& cache,
                                                   double depth_floor = DepthScorer::kDefaultFloor) {
  std::string task;
  if (file.task) {
    task = *file.task;
  } else {
    switch (kind_of(cache.manifest().front().ground_truth)) {
      case GroundTruthKind::binary_mask: task = "segmentation"; break;
      case GroundTruthKind::depth_map: task = "depth"; break;
      case GroundTruthKind::class_label: task = "classification"; break;
    }
  }
  const bool per_pixel = std::holds_alternative<LinearSegHead>(file.head);
  const auto kind = kind_of(cache.manifest().front().ground_truth);
  if (task == "segmentation" && per_pixel && kind == GroundTruthKind::binary_mask) {
    return std::make_unique<SegmentationScorer>(std::get<LinearSegHead>(file.head));
  }
  if (task == "depth" && per_pixel && kind == GroundTruthKind::depth_map) {
    return std::make_unique<DepthScorer>(std::get<LinearSegHead>(file.head), depth_floor);
  }
  if (task == "classification" && !per_pixel && kind == GroundTruthKind::class_label) {
    return std::make_unique<ClassificationScorer>(std::get<LinearClsHead>(file.head));
  }
  fail(ErrorCode::kind_mismatch, "head (task '" + task + "', " + (per_pixel ? "per-pixel" : "classification") +
                                     " weights) cannot score " + std::string(to_string(kind)) + " ground truth");
}

}  // namespace chsurgeon
