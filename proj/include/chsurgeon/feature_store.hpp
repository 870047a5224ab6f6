#pragma once

// Cached encoder feature maps plus their ground truth, and the FEATC01
// container / manifest codecs used to persist them.
//
// Container layout (all integers and floats little-endian):
//   bytes 0-7    magic "FEATC01\0"
//   bytes 8-31   u32 D, C, H, W, dtype (0 = f32), reserved (0)
//   bytes 32-    D*C*H*W f32 values in [d][c][h][w] order
//
// The manifest sidecar lives at <path>.json. Mask and depth ground truth are
// written next to it under <filename>.gt/ as PGM (P5) and single-channel
// FEATC01 files respectively.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

#include "chsurgeon/error.hpp"
#include "chsurgeon/rng.hpp"

namespace chsurgeon {

struct Dims {
  std::size_t images = 0;
  std::size_t channels = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t plane() const { return rows * cols; }
  std::size_t image_stride() const { return channels * plane(); }
  std::size_t total() const { return images * image_stride(); }

  friend bool operator==(const Dims&, const Dims&) = default;
};

struct BinaryMask {
  std::vector<std::uint8_t> pixels;  // 0/1, row-major H*W
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct DepthMap {
  std::vector<float> values;  // row-major H*W, strictly positive
  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

struct ClassLabel {
  std::int64_t label = 0;
  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

enum class GroundTruthKind { binary_mask, depth_map, class_label };

constexpr std::string_view to_string(GroundTruthKind kind) {
  switch (kind) {
    case GroundTruthKind::binary_mask: return "binary_mask";
    case GroundTruthKind::depth_map: return "depth_map";
    case GroundTruthKind::class_label: return "class_label";
  }
  return "unknown";
}

using GroundTruth = std::variant<BinaryMask, DepthMap, ClassLabel>;

inline GroundTruthKind kind_of(const GroundTruth& gt) {
  return static_cast<GroundTruthKind>(gt.index());
}

struct ImageRecord {
  std::string id;
  GroundTruth ground_truth;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

// D x C x H x W float tensor with one ground-truth record per image.
// Immutable once constructed; the constructor enforces every invariant.
class FeatureCache {
 public:
  FeatureCache(Dims dims, std::vector<float> data, std::vector<ImageRecord> manifest)
      : dims_(dims), data_(std::move(data)), manifest_(std::move(manifest)) {
    validate();
  }

  const Dims& dims() const { return dims_; }
  std::size_t images() const { return dims_.images; }
  std::size_t channels() const { return dims_.channels; }
  std::span<const float> data() const { return data_; }
  const std::vector<ImageRecord>& manifest() const { return manifest_; }

  std::span<const float> plane(std::size_t image, std::size_t channel) const {
    return std::span<const float>(data_).subspan(
        image * dims_.image_stride() + channel * dims_.plane(), dims_.plane());
  }

  friend bool operator==(const FeatureCache&, const FeatureCache&) = default;

 private:
  void validate() const {
    if (dims_.images < 1) fail(ErrorCode::invariant_violation, "D must be >= 1");
    if (dims_.channels < 2) fail(ErrorCode::invariant_violation, "C must be >= 2");
    if (dims_.rows < 1) fail(ErrorCode::invariant_violation, "H must be >= 1");
    if (dims_.cols < 1) fail(ErrorCode::invariant_violation, "W must be >= 1");
    if (data_.size() != dims_.total()) {
      fail(ErrorCode::invariant_violation,
           "data length " + std::to_string(data_.size()) + " != D*C*H*W " +
               std::to_string(dims_.total()));
    }
    for (std::size_t k = 0; k < data_.size(); ++k) {
      if (!std::isfinite(data_[k])) {
        fail(ErrorCode::invariant_violation, "data contains non-finite value at offset " + std::to_string(k));
      }
    }
    if (manifest_.size() != dims_.images) {
      fail(ErrorCode::invariant_violation, "manifest length " + std::to_string(manifest_.size()) +
                                               " != D " + std::to_string(dims_.images));
    }
    std::unordered_set<std::string> ids;
    for (const auto& rec : manifest_) {
      if (!ids.insert(rec.id).second) fail(ErrorCode::invariant_violation, "manifest id not unique: " + rec.id);
      validate_ground_truth(rec);
    }
  }

  void validate_ground_truth(const ImageRecord& rec) const {
    const std::size_t plane = dims_.plane();
    if (const auto* mask = std::get_if<BinaryMask>(&rec.ground_truth)) {
      if (mask->pixels.size() != plane) {
        fail(ErrorCode::invariant_violation, "ground_truth of '" + rec.id + "' does not match H*W");
      }
      for (auto p : mask->pixels) {
        if (p > 1) fail(ErrorCode::invariant_violation, "ground_truth mask of '" + rec.id + "' is not {0,1}");
      }
    } else if (const auto* depth = std::get_if<DepthMap>(&rec.ground_truth)) {
      if (depth->values.size() != plane) {
        fail(ErrorCode::invariant_violation, "ground_truth of '" + rec.id + "' does not match H*W");
      }
      for (auto v : depth->values) {
        if (!std::isfinite(v) || v <= 0.0f) {
          fail(ErrorCode::invariant_violation, "ground_truth depth of '" + rec.id + "' must be finite and > 0");
        }
      }
    } else {
      if (std::get<ClassLabel>(rec.ground_truth).label < 0) {
        fail(ErrorCode::invariant_violation, "ground_truth label of '" + rec.id + "' is negative");
      }
    }
  }

  Dims dims_;
  std::vector<float> data_;
  std::vector<ImageRecord> manifest_;
};

inline constexpr std::array<char, 8> kContainerMagic{'F', 'E', 'A', 'T', 'C', '0', '1', '\0'};
inline constexpr std::size_t kContainerHeaderBytes = 32;

struct RawTensor {
  Dims dims;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t checked_u32(std::size_t v, const char* field) {
  if (v > 0xFFFFFFFFu) fail(ErrorCode::invariant_violation, std::string(field) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::io_failure, "read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorCode::io_failure, "write failed: " + path.string());
}

inline std::filesystem::path manifest_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace detail

inline std::string encode_tensor(const Dims& dims, std::span<const float> values) {
  if (values.size() != dims.total()) fail(ErrorCode::invariant_violation, "tensor length does not match dims");
  std::string out;
  out.reserve(kContainerHeaderBytes + 4 * values.size());
  out.append(kContainerMagic.data(), kContainerMagic.size());
  detail::put_u32(out, detail::checked_u32(dims.images, "D"));
  detail::put_u32(out, detail::checked_u32(dims.channels, "C"));
  detail::put_u32(out, detail::checked_u32(dims.rows, "H"));
  detail::put_u32(out, detail::checked_u32(dims.cols, "W"));
  detail::put_u32(out, 0);  // dtype f32
  detail::put_u32(out, 0);  // reserved
  for (float v : values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline RawTensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < kContainerHeaderBytes) fail(ErrorCode::truncated_payload, "header shorter than 32 bytes");
  if (!std::equal(kContainerMagic.begin(), kContainerMagic.end(), bytes.begin())) {
    fail(ErrorCode::bad_magic, "expected FEATC01");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  RawTensor t;
  t.dims = {detail::get_u32(p + 8), detail::get_u32(p + 12), detail::get_u32(p + 16), detail::get_u32(p + 20)};
  const std::uint32_t dtype = detail::get_u32(p + 24);
  if (dtype != 0) fail(ErrorCode::dtype_unsupported, "dtype code " + std::to_string(dtype));
  const std::size_t count = t.dims.total();
  const std::size_t payload = bytes.size() - kContainerHeaderBytes;
  if (payload / 4 < count) {
    fail(ErrorCode::truncated_payload, "header claims " + std::to_string(count) + " values, payload holds " +
                                           std::to_string(payload / 4));
  }
  if (payload != 4 * count) fail(ErrorCode::truncated_payload, "trailing bytes after payload");
  t.values.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    t.values[k] = std::bit_cast<float>(detail::get_u32(p + kContainerHeaderBytes + 4 * k));
  }
  return t;
}

inline void write_tensor(const std::filesystem::path& path, const Dims& dims, std::span<const float> values) {
  detail::write_file(path, encode_tensor(dims, values));
}

inline RawTensor read_tensor(const std::filesystem::path& path) { return decode_tensor(detail::read_file(path)); }

// Binary PGM (P5). Any nonzero pixel reads back as foreground.
inline std::string encode_pgm(const BinaryMask& mask, std::size_t rows, std::size_t cols) {
  std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (auto p : mask.pixels) out.push_back(p ? static_cast<char>(255) : static_cast<char>(0));
  return out;
}

inline BinaryMask decode_pgm(std::string_view bytes, std::size_t& rows, std::size_t& cols) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space();
    std::size_t start = pos, v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
    }
    if (pos == start) fail(ErrorCode::io_failure, "malformed PGM header");
    return v;
  };
  if (bytes.substr(0, 2) != "P5") fail(ErrorCode::bad_magic, "mask is not a binary PGM (P5)");
  pos = 2;
  cols = read_int();
  rows = read_int();
  const std::size_t maxval = read_int();
  if (maxval == 0 || maxval > 255) fail(ErrorCode::dtype_unsupported, "PGM maxval must be in 1..255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    fail(ErrorCode::io_failure, "malformed PGM header");
  }
  ++pos;
  if (bytes.size() - pos < rows * cols) fail(ErrorCode::truncated_payload, "PGM raster truncated");
  BinaryMask mask;
  mask.pixels.resize(rows * cols);
  for (std::size_t k = 0; k < rows * cols; ++k) mask.pixels[k] = bytes[pos + k] != 0 ? 1 : 0;
  return mask;
}

inline void write_cache(const FeatureCache& cache, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const Dims& dims = cache.dims();
  detail::write_file(path, encode_tensor(dims, cache.data()));

  const std::string gt_dir_name = path.filename().string() + ".gt";
  const fs::path gt_dir = path.parent_path() / gt_dir_name;
  const bool needs_dir = std::any_of(cache.manifest().begin(), cache.manifest().end(), [](const ImageRecord& r) {
    return kind_of(r.ground_truth) != GroundTruthKind::class_label;
  });
  if (needs_dir) {
    std::error_code ec;
    fs::create_directories(gt_dir, ec);
    if (ec) fail(ErrorCode::io_failure, "cannot create " + gt_dir.string() + ": " + ec.message());
  }

  nlohmann::json images = nlohmann::json::array();
  for (std::size_t d = 0; d < cache.images(); ++d) {
    const ImageRecord& rec = cache.manifest()[d];
    nlohmann::json entry;
    entry["id"] = rec.id;
    entry["kind"] = std::string(to_string(kind_of(rec.ground_truth)));
    if (const auto* mask = std::get_if<BinaryMask>(&rec.ground_truth)) {
      const std::string rel = gt_dir_name + "/" + std::to_string(d) + ".pgm";
      detail::write_file(gt_dir / (std::to_string(d) + ".pgm"), encode_pgm(*mask, dims.rows, dims.cols));
      entry["gt"] = rel;
    } else if (const auto* depth = std::get_if<DepthMap>(&rec.ground_truth)) {
      const std::string rel = gt_dir_name + "/" + std::to_string(d) + ".featc";
      write_tensor(gt_dir / (std::to_string(d) + ".featc"), Dims{1, 1, dims.rows, dims.cols}, depth->values);
      entry["gt"] = rel;
    } else {
      entry["gt"] = std::get<ClassLabel>(rec.ground_truth).label;
    }
    images.push_back(std::move(entry));
  }
  nlohmann::json manifest;
  manifest["images"] = std::move(images);
  detail::write_file(detail::manifest_path(path), manifest.dump(2) + "\n");
}

inline FeatureCache read_cache(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  RawTensor tensor = read_tensor(path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(detail::manifest_path(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::manifest_mismatch, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("images") || !manifest["images"].is_array()) {
    fail(ErrorCode::manifest_mismatch, "manifest lacks an 'images' array");
  }
  const auto& images = manifest["images"];
  if (images.size() != tensor.dims.images) {
    fail(ErrorCode::manifest_mismatch, "manifest has " + std::to_string(images.size()) + " images, header D = " +
                                           std::to_string(tensor.dims.images));
  }

  const fs::path base = path.parent_path();
  std::vector<ImageRecord> records;
  records.reserve(images.size());
  try {
    for (const auto& entry : images) {
      ImageRecord rec;
      rec.id = entry.at("id").get<std::string>();
      const auto kind = entry.at("kind").get<std::string>();
      if (kind == "binary_mask") {
        std::size_t rows = 0, cols = 0;
        BinaryMask mask = decode_pgm(detail::read_file(base / entry.at("gt").get<std::string>()), rows, cols);
        if (rows != tensor.dims.rows || cols != tensor.dims.cols) {
          fail(ErrorCode::invariant_violation, "ground_truth of '" + rec.id + "' does not match H*W");
        }
        rec.ground_truth = std::move(mask);
      } else if (kind == "depth_map") {
        RawTensor depth = read_tensor(base / entry.at("gt").get<std::string>());
        if (depth.dims != Dims{1, 1, tensor.dims.rows, tensor.dims.cols}) {
          fail(ErrorCode::invariant_violation, "ground_truth of '" + rec.id + "' does not match H*W");
        }
        rec.ground_truth = DepthMap{std::move(depth.values)};
      } else if (kind == "class_label") {
        rec.ground_truth = ClassLabel{entry.at("gt").get<std::int64_t>()};
      } else {
        fail(ErrorCode::manifest_mismatch, "unknown ground-truth kind '" + kind + "'");
      }
      records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::manifest_mismatch, std::string("malformed manifest entry: ") + e.what());
  }
  return FeatureCache(tensor.dims, std::move(tensor.values), std::move(records));
}

// Keeps the given images, in the given order.
inline FeatureCache select_images(const FeatureCache& cache, std::span<const std::size_t> indices) {
  Dims dims = cache.dims();
  dims.images = indices.size();
  std::vector<float> data;
  data.reserve(dims.total());
  std::vector<ImageRecord> manifest;
  manifest.reserve(indices.size());
  for (std::size_t d : indices) {
    if (d >= cache.images()) fail(ErrorCode::index_out_of_range, "image index " + std::to_string(d));
    const auto block = cache.data().subspan(d * dims.image_stride(), dims.image_stride());
    data.insert(data.end(), block.begin(), block.end());
    manifest.push_back(cache.manifest()[d]);
  }
  return FeatureCache(dims, std::move(data), std::move(manifest));
}

// Uniform sample without replacement: partial Fisher-Yates over 0..D-1 driven
// by Rng(seed).uniform_below, then the chosen indices in ascending order.
inline std::vector<std::size_t> sample_indices(std::size_t population, std::size_t count, std::uint64_t seed) {
  if (count < 1 || count > population) {
    fail(ErrorCode::count_out_of_range,
         "count " + std::to_string(count) + " not in [1, " + std::to_string(population) + "]");
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t r = k + static_cast<std::size_t>(rng.uniform_below(population - k));
    std::swap(idx[k], idx[r]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline FeatureCache subsample(const FeatureCache& cache, std::size_t count, std::uint64_t seed) {
  const auto idx = sample_indices(cache.images(), count, seed);
  return select_images(cache, idx);
}

}  // namespace chsurgeon
