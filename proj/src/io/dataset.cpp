#include "symclone/dataset.hpp"

#include <zlib.h>

#include <cmath>
#include <numeric>

#include "symclone/rng.hpp"

namespace symclone {

void Dataset::validate() const {
  if (images.rank() != 3) throw ShapeError("dataset images must be [n,H,W], got " + shape_string(images.shape()));
  if (images.dim(0) != size()) throw ShapeError("dataset has " + std::to_string(images.dim(0)) + " images and " +
                                                std::to_string(size()) + " labels");
  if (!meta.empty() && static_cast<std::int64_t>(meta.size()) != size()) {
    throw ShapeError("dataset metadata length does not match sample count");
  }
}

Dataset Dataset::subset(const std::vector<std::int64_t>& indices) const {
  Dataset out;
  const std::int64_t plane = height() * width();
  out.images = Tensor({static_cast<std::int64_t>(indices.size()), height(), width()}, images.dtype());
  dispatch(images.dtype(), [&]<typename T>() {
    auto src = images.data<T>();
    auto dst = out.images.data<T>();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const std::int64_t j = indices[i];
      if (j < 0 || j >= size()) throw ShapeError("dataset index out of range");
      std::copy(src.begin() + j * plane, src.begin() + (j + 1) * plane, dst.begin() + static_cast<std::int64_t>(i) * plane);
    }
  });
  for (auto j : indices) {
    out.labels.push_back(labels[static_cast<std::size_t>(j)]);
    if (!meta.empty()) out.meta.push_back(meta[static_cast<std::size_t>(j)]);
  }
  return out;
}

Tensor Dataset::batch_images(const std::vector<std::int64_t>& indices) const {
  Tensor out = subset(indices).images;
  return std::move(out).reshaped({static_cast<std::int64_t>(indices.size()), 1, height(), width()});
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  for (;;) {
    const int got = gzread(f, buf, sizeof buf);
    if (got < 0) {
      gzclose(f);
      throw FormatError("corrupt compressed stream in " + path.string());
    }
    if (got == 0) break;
    out.insert(out.end(), buf, buf + got);
  }
  gzclose(f);
  return out;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  if (img.size() < 16) throw FormatError(images_path.string() + ": truncated IDX header");
  if (lab.size() < 8) throw FormatError(labels_path.string() + ": truncated IDX header");
  if (be32(img, 0) != 2051) {
    throw FormatError(images_path.string() + ": bad image magic " + std::to_string(be32(img, 0)) + " (expected 2051)");
  }
  if (be32(lab, 0) != 2049) {
    throw FormatError(labels_path.string() + ": bad label magic " + std::to_string(be32(lab, 0)) + " (expected 2049)");
  }
  const std::uint64_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12), nl = be32(lab, 4);
  if (n != nl) {
    throw FormatError("image count " + std::to_string(n) + " does not match label count " + std::to_string(nl));
  }
  if (rows == 0 || cols == 0) throw FormatError(images_path.string() + ": zero image dimension");
  if (img.size() < 16 + n * rows * cols) throw FormatError(images_path.string() + ": truncated pixel data");
  if (lab.size() < 8 + n) throw FormatError(labels_path.string() + ": truncated label data");
  Dataset d;
  d.images = Tensor({static_cast<std::int64_t>(n), static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols)});
  auto px = d.images.data<float>();
  for (std::uint64_t i = 0; i < n * rows * cols; ++i) px[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const int y = lab[8 + i];
    if (y > 9) throw FormatError(labels_path.string() + ": label " + std::to_string(y) + " outside 0..9");
    d.labels[i] = y;
  }
  return d;
}

std::vector<Dataset> deterministic_split(const Dataset& dataset, const std::vector<double>& fractions,
                                         std::uint64_t seed) {
  if (fractions.empty()) throw Error("split fractions must not be empty");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw Error("split fractions must be finite and non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("split fractions must sum to 1, got " + std::to_string(total));
  SeededRng rng(seed);
  const auto perm = random_permutation(rng, dataset.size());
  std::vector<Dataset> parts;
  double cum = 0.0;
  std::int64_t begin = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    cum += fractions[i];
    const std::int64_t end = i + 1 == fractions.size()
                                 ? dataset.size()
                                 : std::llround(cum * static_cast<double>(dataset.size()));
    parts.push_back(dataset.subset(std::vector<std::int64_t>(perm.begin() + begin, perm.begin() + end)));
    begin = end;
  }
  return parts;
}

Dataset downsample(const Dataset& dataset, std::int64_t factor) {
  if (factor < 1 || dataset.height() % factor != 0 || dataset.width() % factor != 0) {
    throw ShapeError("downsample factor " + std::to_string(factor) + " does not divide the image grid");
  }
  if (factor == 1) return dataset;
  const std::int64_t n = dataset.size(), h = dataset.height() / factor, w = dataset.width() / factor;
  Dataset out;
  out.labels = dataset.labels;
  out.meta = dataset.meta;
  out.images = Tensor({n, h, w}, dataset.images.dtype());
  const double inv = 1.0 / static_cast<double>(factor * factor);
  dispatch(out.images.dtype(), [&]<typename T>() {
    auto src = dataset.images.data<T>();
    auto dst = out.images.data<T>();
    const std::int64_t sw = dataset.width(), splane = dataset.height() * sw;
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < w; ++c) {
          double acc = 0.0;
          for (std::int64_t a = 0; a < factor; ++a) {
            for (std::int64_t b = 0; b < factor; ++b) acc += src[i * splane + (r * factor + a) * sw + c * factor + b];
          }
          dst[(i * h + r) * w + c] = static_cast<T>(acc * inv);
        }
      }
    }
  });
  return out;
}

}  // namespace symclone
