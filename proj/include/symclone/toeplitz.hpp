#pragma once

#include <cstdint>

#include "symclone/padding.hpp"
#include "symclone/tensor.hpp"

namespace symclone {

/// Unrolled 3x3 cross-correlation on an H x W grid. selectors[k] is the 0/1
/// matrix [N,N] of kernel entry k (row-major over the 3x3 footprint), so
/// that sum_k tau_k selectors[k] is the convolution matrix.
struct ToeplitzOracle {
  std::int64_t height = 0;
  std::int64_t width = 0;
  Padding padding = Padding::zero_fill;
  Tensor selectors;  // [9,N,N]

  std::int64_t size() const noexcept { return height * width; }
  /// sum_k tau_k P_k as an [N,N] matrix.
  Tensor matrix(const Tensor& tau) const;
  /// (sum_k tau_k P_k) x for x [N] or [R,N].
  Tensor apply(const Tensor& x, const Tensor& tau) const;
};

ToeplitzOracle toeplitz_unroll(std::int64_t height, std::int64_t width, Padding padding, DType dtype = DType::f32);

/// ||stack(M) - stack(P)||_F / ||stack(P)||_F for blocks [9,N,N].
double toeplitz_error(const Tensor& blocks, const ToeplitzOracle& oracle);

}  // namespace symclone
