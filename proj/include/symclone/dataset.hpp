#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "symclone/tensor.hpp"

namespace symclone {

/// Transformation applied to one sample: a shift (dy,dx) or k quarter turns.
struct TransformMeta {
  int dy = 0;
  int dx = 0;
  int k = 0;
  bool operator==(const TransformMeta&) const = default;
};

/// images [n,H,W] in [0,1] (f32), one label per image, optional per-sample
/// transform metadata (empty or size n).
struct Dataset {
  Tensor images{Shape{0, 28, 28}};
  std::vector<int> labels;
  std::vector<TransformMeta> meta;

  std::int64_t size() const noexcept { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t height() const { return images.dim(1); }
  std::int64_t width() const { return images.dim(2); }
  Dataset subset(const std::vector<std::int64_t>& indices) const;
  /// Images of the listed samples as [k,1,H,W].
  Tensor batch_images(const std::vector<std::int64_t>& indices) const;
  void validate() const;
};

/// Reads an IDX image file (magic 2051) and label file (magic 2049); gzip
/// compressed files are accepted. Pixels are scaled by 1/255.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Seeded shuffle, then contiguous slices with boundaries round(cumsum * n).
std::vector<Dataset> deterministic_split(const Dataset& dataset, const std::vector<double>& fractions,
                                         std::uint64_t seed);

/// 2x2 mean pooling per factor step; used to run benchmarks at 14x14.
Dataset downsample(const Dataset& dataset, std::int64_t factor);

}  // namespace symclone
