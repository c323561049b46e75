#pragma once

#include <cstdint>
#include <vector>

#include "symclone/padding.hpp"
#include "symclone/tensor.hpp"

namespace symclone {

/// Integer pixel shift in T(2). Composition adds components.
struct T2Element {
  int dy = 0;
  int dx = 0;

  static T2Element identity() { return {}; }
  T2Element compose(const T2Element& other) const { return {dy + other.dy, dx + other.dx}; }
  T2Element inverse() const { return {-dy, -dx}; }
  bool operator==(const T2Element&) const = default;
};

/// Clockwise quarter turns in C4, k in {0,1,2,3}.
class C4Element {
 public:
  C4Element() = default;
  explicit C4Element(int k) : k_(((k % 4) + 4) % 4) {}

  static C4Element identity() { return C4Element(0); }
  static std::vector<C4Element> all() { return {C4Element(0), C4Element(1), C4Element(2), C4Element(3)}; }

  int k() const noexcept { return k_; }
  C4Element compose(const C4Element& other) const { return C4Element(k_ + other.k_); }
  C4Element inverse() const { return C4Element(4 - k_); }
  bool operator==(const C4Element&) const = default;

 private:
  int k_ = 0;
};

/// out(r,c) = x(r-dy, c-dx) over the last two axes; leading axes are batched.
Tensor translate_image(const Tensor& x, const T2Element& g, Padding padding);

/// k clockwise quarter turns over the last two (equal) axes;
/// one turn maps out(r,c) = x(H-1-c, r).
Tensor rotate90_image(const Tensor& x, const C4Element& g);

/// Regular-representation action on lifted maps [..., 4, H, H]:
/// out(s) = rotate90_image(f((s-k) mod 4), k).
Tensor act_on_lifted(const Tensor& f, const C4Element& g);

/// Flat-index map of rotate90_image on an H x W grid (H == W):
/// rotated.flat[i] = original.flat[map[i]]. Used to rotate kernels on a tape.
std::vector<std::int64_t> rotation_index_map(std::int64_t side, const C4Element& g);

}  // namespace symclone
