#include "symclone/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace symclone {

GroupKind parse_group_kind(const std::string& name) {
  if (name == "t2" || name == "T2") return GroupKind::t2;
  if (name == "c4" || name == "C4") return GroupKind::c4;
  throw Error("unknown group '" + name + "'");
}

std::string to_string(GroupKind group) { return group == GroupKind::t2 ? "T2" : "C4"; }

Tensor act(const Tensor& x, Geometry geometry, const T2Element& g, Padding padding) {
  if (geometry == Geometry::invariant) return x;
  return translate_image(x, g, padding);
}

Tensor act(const Tensor& x, Geometry geometry, const C4Element& g) {
  switch (geometry) {
    case Geometry::invariant: return x;
    case Geometry::planar: return rotate90_image(x, g);
    case Geometry::lifted: return act_on_lifted(x, g);
  }
  return x;
}

double relative_residual(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("residual shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a.at(i) - b.at(i);
    num += d * d;
    den += b.at(i) * b.at(i);
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-12);
}

EquivarianceReport summarize(std::string group, std::vector<double> residuals) {
  EquivarianceReport r;
  r.group = std::move(group);
  r.samples = static_cast<std::int64_t>(residuals.size());
  if (!residuals.empty()) {
    double sum = 0.0;
    for (double v : residuals) {
      sum += v;
      r.max = std::max(r.max, v);
    }
    r.mean = sum / static_cast<double>(residuals.size());
    double var = 0.0;
    for (double v : residuals) var += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(var / static_cast<double>(residuals.size()));
  }
  r.residuals = std::move(residuals);
  return r;
}

namespace {

void check_geometry(const EquivarianceProbe& probe, GroupKind group) {
  const Shape& s = probe.input_shape;
  if (s.size() < 2) throw ShapeError("equivariance probe needs an input of rank >= 2");
  if (probe.input == Geometry::invariant) throw ShapeError("unsupported input geometry: invariant inputs carry no action");
  if (probe.input == Geometry::lifted && (s.size() < 3 || s[s.size() - 3] != 4)) {
    throw ShapeError("lifted inputs need a 4-orientation axis, got " + shape_string(s));
  }
  if (group == GroupKind::c4 && s[s.size() - 1] != s[s.size() - 2]) {
    throw ShapeError("C4 equivariance needs square inputs, got " + shape_string(s));
  }
}

double sample_residual(const EquivarianceProbe& probe, GroupKind group, const Tensor& x, SeededRng& rng,
                       const EquivarianceOptions& options) {
  if (probe.resample) probe.resample(rng);
  const Tensor y = probe.model(x);
  if (group == GroupKind::t2) {
    const Shape& s = probe.input_shape;
    const int h = static_cast<int>(s[s.size() - 2]), w = static_cast<int>(s[s.size() - 1]);
    const int my = options.max_shift < 0 ? h - 1 : std::min(options.max_shift, h - 1);
    const int mx = options.max_shift < 0 ? w - 1 : std::min(options.max_shift, w - 1);
    T2Element g;
    if (my == 0 && mx == 0) return 0.0;
    do {
      g.dy = static_cast<int>(rng.uniform_int(-my, my));
      g.dx = static_cast<int>(rng.uniform_int(-mx, mx));
    } while (g == T2Element::identity());
    const Tensor lhs = probe.model(act(x, probe.input, g, options.action_padding));
    return relative_residual(lhs, act(y, probe.output, g, options.action_padding));
  }
  const C4Element g(static_cast<int>(rng.uniform_int(1, 3)));
  if (probe.output == Geometry::lifted && (y.rank() < 3 || y.dim(y.rank() - 3) != 4)) {
    throw ShapeError("unsupported output geometry: lifted output without a 4-orientation axis");
  }
  const Tensor lhs = probe.model(act(x, probe.input, g));
  return relative_residual(lhs, act(y, probe.output, g));
}

}  // namespace

EquivarianceReport equivariance_error(const EquivarianceProbe& probe, GroupKind group, std::int64_t n_samples,
                                      SeededRng& rng, const EquivarianceOptions& options) {
  check_geometry(probe, group);
  if (n_samples < 1) throw Error("equivariance_error needs at least one sample");
  std::vector<double> residuals;
  residuals.reserve(static_cast<std::size_t>(n_samples));
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const Tensor x = sample_standard_normal(rng, probe.input_shape, probe.dtype);
    residuals.push_back(sample_residual(probe, group, x, rng, options));
  }
  return summarize(to_string(group), std::move(residuals));
}

EquivarianceReport equivariance_error_on(const EquivarianceProbe& probe, GroupKind group, const Tensor& inputs,
                                         SeededRng& rng, const EquivarianceOptions& options) {
  check_geometry(probe, group);
  const std::int64_t per = shape_numel(probe.input_shape);
  if (inputs.rank() != probe.input_shape.size() + 1 || inputs.numel() != inputs.dim(0) * per) {
    throw ShapeError("inputs " + shape_string(inputs.shape()) + " do not stack samples of " +
                     shape_string(probe.input_shape));
  }
  std::vector<double> residuals;
  for (std::int64_t i = 0; i < inputs.dim(0); ++i) {
    Tensor x(probe.input_shape, inputs.dtype());
    for (std::int64_t e = 0; e < per; ++e) x.set(e, inputs.at(i * per + e));
    residuals.push_back(sample_residual(probe, group, x, rng, options));
  }
  return summarize(to_string(group), std::move(residuals));
}

void write_metric_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, EquivarianceReport>>& rows) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot write " + path.string());
  if (fresh) out << "metric,mean,max,std,n\n";
  out.precision(9);
  for (const auto& [name, r] : rows) out << name << ',' << r.mean << ',' << r.max << ',' << r.std << ',' << r.samples << '\n';
}

std::vector<std::uint8_t> normalize_to_bytes(const Tensor& image) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(image.numel()), 128);
  if (image.numel() == 0) return out;
  double lo = image.at(0), hi = image.at(0);
  for (std::int64_t i = 1; i < image.numel(); ++i) {
    lo = std::min(lo, image.at(i));
    hi = std::max(hi, image.at(i));
  }
  if (!(hi > lo)) return out;
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(255.0 * (image.at(i) - lo) / (hi - lo)));
  }
  return out;
}

void write_pgm_bytes(const std::filesystem::path& path, std::int64_t height, std::int64_t width,
                     const std::vector<std::uint8_t>& pixels) {
  if (static_cast<std::int64_t>(pixels.size()) != height * width) throw ShapeError("pgm pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw Error("failed writing image " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("write_pgm expects [H,W], got " + shape_string(image.shape()));
  write_pgm_bytes(path, image.dim(0), image.dim(1), normalize_to_bytes(image));
}

std::vector<std::filesystem::path> export_feature_maps(const std::vector<FeatureMapModel>& models,
                                                       const std::vector<Tensor>& inputs,
                                                       const std::filesystem::path& directory) {
  if (inputs.empty()) throw Error("export_feature_maps needs at least one input");
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw Error("cannot create " + directory.string() + ": " + ec.message());
  const std::int64_t h = inputs[0].dim(0), w = inputs[0].dim(1);
  const std::int64_t cols = 1 + static_cast<std::int64_t>(models.size());
  const std::int64_t rows = static_cast<std::int64_t>(inputs.size());
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(rows * h * cols * w), 0);
  std::vector<std::filesystem::path> written;
  const auto place = [&](std::int64_t row, std::int64_t col, const std::vector<std::uint8_t>& px) {
    for (std::int64_t r = 0; r < h; ++r) {
      for (std::int64_t c = 0; c < w; ++c) {
        grid[static_cast<std::size_t>((row * h + r) * cols * w + col * w + c)] = px[static_cast<std::size_t>(r * w + c)];
      }
    }
  };
  for (std::int64_t i = 0; i < rows; ++i) {
    const Tensor& x = inputs[static_cast<std::size_t>(i)];
    if (x.rank() != 2 || x.dim(0) != h || x.dim(1) != w) throw ShapeError("all exported inputs must share one [H,W] shape");
    const auto path = directory / ("input_" + std::to_string(i) + ".pgm");
    write_pgm(path, x);
    written.push_back(path);
    place(i, 0, normalize_to_bytes(x));
    for (std::size_t m = 0; m < models.size(); ++m) {
      const Tensor y = models[m].fn(x);
      if (y.rank() != 2 || y.dim(0) != h || y.dim(1) != w) {
        throw ShapeError("model '" + models[m].name + "' produced " + shape_string(y.shape()) + ", expected [H,W]");
      }
      const auto mp = directory / (models[m].name + "_" + std::to_string(i) + ".pgm");
      write_pgm(mp, y);
      written.push_back(mp);
      place(i, static_cast<std::int64_t>(m) + 1, normalize_to_bytes(y));
    }
  }
  const auto gp = directory / "grid.pgm";
  write_pgm_bytes(gp, rows * h, cols * w, grid);
  written.push_back(gp);
  return written;
}

}  // namespace symclone
