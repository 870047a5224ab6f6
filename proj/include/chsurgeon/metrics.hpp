#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chsurgeon/error.hpp"

namespace chsurgeon::metrics {

// Standard depth-estimation threshold; not a tunable.
inline constexpr double kDelta1Threshold = 1.25;

enum class Direction { higher_better, lower_better };

struct MetricValue {
  std::string name;
  double value = 0.0;
  Direction direction = Direction::higher_better;
};

// |pred & gt| / |pred | gt|, 1.0 when both are empty.
inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) fail(ErrorCode::dim_mismatch, "iou: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const bool p = pred[k] != 0, g = gt[k] != 0;
    inter += static_cast<std::size_t>(p && g);
    uni += static_cast<std::size_t>(p || g);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Ordered mean; summation follows index order so results are bit-stable.
inline double mean(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::empty_list, "mean of empty list");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

inline double mean_iou(std::span<const std::vector<std::uint8_t>> preds,
                       std::span<const std::vector<std::uint8_t>> gts) {
  if (preds.size() != gts.size()) fail(ErrorCode::length_mismatch, "mean_iou: list lengths differ");
  if (preds.empty()) fail(ErrorCode::empty_list, "mean_iou: no images");
  std::vector<double> per_image(preds.size());
  for (std::size_t k = 0; k < preds.size(); ++k) per_image[k] = iou(preds[k], gts[k]);
  return mean(per_image);
}

struct DepthMetrics {
  double mse = 0.0;
  double abs_rel = 0.0;
  double delta1 = 0.0;
};

inline DepthMetrics depth_metrics(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) fail(ErrorCode::dim_mismatch, "depth_metrics: raster sizes differ");
  if (pred.empty()) fail(ErrorCode::empty_list, "depth_metrics: empty raster");
  double se = 0.0, rel = 0.0;
  std::size_t within = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!(gt[k] > 0.0)) fail(ErrorCode::nonpositive_gt, "depth ground truth must be > 0");
    const double diff = pred[k] - gt[k];
    se += diff * diff;
    rel += std::abs(diff) / gt[k];
    if (pred[k] > 0.0) {
      const double ratio = std::max(pred[k] / gt[k], gt[k] / pred[k]);
      within += static_cast<std::size_t>(ratio < kDelta1Threshold);
    }
  }
  const double n = static_cast<double>(pred.size());
  return {se / n, rel / n, static_cast<double>(within) / n};
}

inline double top1_accuracy(std::span<const std::int64_t> pred, std::span<const std::int64_t> gt) {
  if (pred.size() != gt.size()) fail(ErrorCode::length_mismatch, "top1_accuracy: list lengths differ");
  if (pred.empty()) fail(ErrorCode::empty_list, "top1_accuracy: no labels");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) hits += static_cast<std::size_t>(pred[k] == gt[k]);
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace chsurgeon::metrics
