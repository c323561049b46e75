#include "symclone/toeplitz.hpp"

#include <cmath>

namespace symclone {

ToeplitzOracle toeplitz_unroll(std::int64_t height, std::int64_t width, Padding padding, DType dtype) {
  if (height < 1 || width < 1) throw ShapeError("toeplitz_unroll: grid must be at least 1x1");
  const std::int64_t n = height * width;
  ToeplitzOracle oracle{height, width, padding, Tensor({9, n, n}, dtype)};
  for (std::int64_t i = 0; i < 3; ++i) {
    for (std::int64_t j = 0; j < 3; ++j) {
      const std::int64_t k = i * 3 + j;
      for (std::int64_t r = 0; r < height; ++r) {
        for (std::int64_t c = 0; c < width; ++c) {
          std::int64_t rr = r + i - 1, cc = c + j - 1;
          if (padding == Padding::circular) {
            rr = ((rr % height) + height) % height;
            cc = ((cc % width) + width) % width;
          } else if (rr < 0 || rr >= height || cc < 0 || cc >= width) {
            continue;
          }
          oracle.selectors.set((k * n + r * width + c) * n + rr * width + cc, 1.0);
        }
      }
    }
  }
  return oracle;
}

Tensor ToeplitzOracle::matrix(const Tensor& tau) const {
  if (tau.numel() != 9) throw ShapeError("toeplitz matrix needs 9 kernel entries, got " + shape_string(tau.shape()));
  const std::int64_t n = size();
  Tensor m({n, n}, selectors.dtype());
  for (std::int64_t k = 0; k < 9; ++k) {
    const double t = tau.at(k);
    for (std::int64_t e = 0; e < n * n; ++e) {
      const double p = selectors.at(k * n * n + e);
      if (p != 0.0) m.set(e, m.at(e) + t * p);
    }
  }
  return m;
}

Tensor ToeplitzOracle::apply(const Tensor& x, const Tensor& tau) const {
  const std::int64_t n = size();
  if (x.numel() % n != 0 || x.shape().back() != n) {
    throw ShapeError("toeplitz apply: input " + shape_string(x.shape()) + " does not end in " + std::to_string(n));
  }
  const Tensor m = matrix(tau);
  const std::int64_t rows = x.numel() / n;
  Tensor y(x.shape(), x.dtype());
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t o = 0; o < n; ++o) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) acc += m.at(o * n + i) * x.at(r * n + i);
      y.set(r * n + o, acc);
    }
  }
  return y;
}

double toeplitz_error(const Tensor& blocks, const ToeplitzOracle& oracle) {
  if (blocks.shape() != oracle.selectors.shape()) {
    throw ShapeError("toeplitz_error: blocks " + shape_string(blocks.shape()) + " vs oracle " +
                     shape_string(oracle.selectors.shape()));
  }
  double num = 0.0, den = 0.0;
  for (std::int64_t e = 0; e < blocks.numel(); ++e) {
    const double p = oracle.selectors.at(e);
    const double d = blocks.at(e) - p;
    num += d * d;
    den += p * p;
  }
  if (den == 0.0) throw NumericError("toeplitz_error: oracle stack is all zero");
  return std::sqrt(num / den);
}

}  // namespace symclone
