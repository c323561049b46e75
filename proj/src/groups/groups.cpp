#include "symclone/groups.hpp"

#include <algorithm>

namespace symclone {

namespace {

struct GridView {
  std::int64_t outer, h, w;
};

GridView grid_of(const Tensor& x, const char* op) {
  if (x.rank() < 2) throw ShapeError(std::string(op) + ": needs at least 2 axes, got " + shape_string(x.shape()));
  const auto h = x.shape()[x.rank() - 2], w = x.shape()[x.rank() - 1];
  if (h < 1 || w < 1) throw ShapeError(std::string(op) + ": empty grid " + shape_string(x.shape()));
  return {x.numel() / (h * w), h, w};
}

std::int64_t wrap(std::int64_t i, std::int64_t n) { return ((i % n) + n) % n; }

}  // namespace

Tensor translate_image(const Tensor& x, const T2Element& g, Padding padding) {
  const auto grid = grid_of(x, "translate_image");
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t p = 0; p < grid.outer; ++p) {
      const auto base = p * grid.h * grid.w;
      for (std::int64_t r = 0; r < grid.h; ++r) {
        for (std::int64_t c = 0; c < grid.w; ++c) {
          std::int64_t sr = r - g.dy, sc = c - g.dx;
          if (padding == Padding::circular) {
            sr = wrap(sr, grid.h);
            sc = wrap(sc, grid.w);
          } else if (sr < 0 || sr >= grid.h || sc < 0 || sc >= grid.w) {
            continue;
          }
          dst[base + r * grid.w + c] = src[base + sr * grid.w + sc];
        }
      }
    }
  });
  return out;
}

std::vector<std::int64_t> rotation_index_map(std::int64_t side, const C4Element& g) {
  std::vector<std::int64_t> map(static_cast<std::size_t>(side * side));
  for (std::int64_t i = 0; i < side * side; ++i) map[static_cast<std::size_t>(i)] = i;
  for (int turn = 0; turn < g.k(); ++turn) {
    std::vector<std::int64_t> next(map.size());
    for (std::int64_t r = 0; r < side; ++r) {
      for (std::int64_t c = 0; c < side; ++c) {
        next[static_cast<std::size_t>(r * side + c)] = map[static_cast<std::size_t>((side - 1 - c) * side + r)];
      }
    }
    map = std::move(next);
  }
  return map;
}

Tensor rotate90_image(const Tensor& x, const C4Element& g) {
  const auto grid = grid_of(x, "rotate90_image");
  if (grid.h != grid.w) throw ShapeError("rotate90_image: grid must be square, got " + shape_string(x.shape()));
  const auto map = rotation_index_map(grid.h, g);
  const auto plane = grid.h * grid.w;
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t p = 0; p < grid.outer; ++p) {
      for (std::int64_t i = 0; i < plane; ++i) dst[p * plane + i] = src[p * plane + map[static_cast<std::size_t>(i)]];
    }
  });
  return out;
}

Tensor act_on_lifted(const Tensor& f, const C4Element& g) {
  if (f.rank() < 3 || f.shape()[f.rank() - 3] != 4) {
    throw ShapeError("act_on_lifted: expected [..., 4, H, H], got " + shape_string(f.shape()));
  }
  const Tensor rotated = rotate90_image(f, g);
  const auto plane = f.shape()[f.rank() - 2] * f.shape()[f.rank() - 1];
  const auto outer = f.numel() / (4 * plane);
  Tensor out(f.shape(), f.dtype());
  dispatch(f.dtype(), [&]<typename T>() {
    auto src = rotated.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t p = 0; p < outer; ++p) {
      for (int s = 0; s < 4; ++s) {
        const int from = (s - g.k() + 4) % 4;
        std::copy_n(src.begin() + (p * 4 + from) * plane, plane, dst.begin() + (p * 4 + s) * plane);
      }
    }
  });
  return out;
}

}  // namespace symclone
