#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "symclone/groups.hpp"
#include "symclone/rng.hpp"
#include "symclone/tensor.hpp"

namespace symclone {

enum class GroupKind { t2, c4 };

GroupKind parse_group_kind(const std::string& name);
std::string to_string(GroupKind group);

/// How a group element acts on a sample.
///   planar: every [H,W] plane is translated / rotated
///   lifted: [...,4,H,W]; T(2) translates planes, C4 uses act_on_lifted
///   invariant: trivial action
enum class Geometry { planar, lifted, invariant };

struct EquivarianceReport {
  std::string group;
  std::int64_t samples = 0;
  double mean = 0.0;
  double max = 0.0;
  double std = 0.0;
  std::vector<double> residuals;
};

/// A per-sample map whose equivariance is measured. `resample`, when set,
/// runs before each sample (e.g. to draw a fresh kernel tau).
struct EquivarianceProbe {
  std::function<Tensor(const Tensor&)> model;
  std::function<void(SeededRng&)> resample;
  Shape input_shape;
  /// Dtype of the sampled inputs.
  DType dtype = DType::f32;
  Geometry input = Geometry::planar;
  Geometry output = Geometry::planar;
};

struct EquivarianceOptions {
  /// Padding used by the translation action; circular keeps it a bijection.
  Padding action_padding = Padding::circular;
  /// Largest |dy|,|dx| sampled; negative means the whole grid.
  int max_shift = -1;
};

Tensor act(const Tensor& x, Geometry geometry, const T2Element& g, Padding padding);
Tensor act(const Tensor& x, Geometry geometry, const C4Element& g);

/// ||a - b||_2 / (||b||_2 + 1e-12)
double relative_residual(const Tensor& a, const Tensor& b);

/// Mean over n sampled (g, x) of ||model(g.x) - g.model(x)|| / (||model(x)|| + 1e-12).
/// x is standard normal; g is a uniformly drawn non-identity element.
EquivarianceReport equivariance_error(const EquivarianceProbe& probe, GroupKind group, std::int64_t n_samples,
                                      SeededRng& rng, const EquivarianceOptions& options = {});

/// As above over caller-supplied inputs [n,...input_shape].
EquivarianceReport equivariance_error_on(const EquivarianceProbe& probe, GroupKind group, const Tensor& inputs,
                                         SeededRng& rng, const EquivarianceOptions& options = {});

EquivarianceReport summarize(std::string group, std::vector<double> residuals);

/// Appends "metric,mean,max,std,n" rows; writes the header for new files.
void write_metric_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, EquivarianceReport>>& rows);

/// Min-max normalised grayscale bytes; a constant image maps to 128.
std::vector<std::uint8_t> normalize_to_bytes(const Tensor& image);
/// Binary PGM (P5, maxval 255) of an [H,W] image after normalize_to_bytes.
void write_pgm(const std::filesystem::path& path, const Tensor& image);
/// Raw PGM writer for already quantised pixels.
void write_pgm_bytes(const std::filesystem::path& path, std::int64_t height, std::int64_t width,
                     const std::vector<std::uint8_t>& pixels);

struct FeatureMapModel {
  std::string name;
  /// [H,W] input -> [H,W] feature map
  std::function<Tensor(const Tensor&)> fn;
};

/// Writes input_<i>.pgm, <model>_<i>.pgm for every pair and grid.pgm with
/// one row per input and columns (input, model_1, ..., model_m). Returns
/// the written paths.
std::vector<std::filesystem::path> export_feature_maps(const std::vector<FeatureMapModel>& models,
                                                       const std::vector<Tensor>& inputs,
                                                       const std::filesystem::path& directory);

}  // namespace symclone
