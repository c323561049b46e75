#include "symclone/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace symclone::ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

void same_dtype(const char* op, const Var& a, const Var& b) {
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch " + to_string(a.dtype()) + " vs " + to_string(b.dtype()));
  }
}

void same_shape(const char* op, const Var& a, const Var& b) {
  same_dtype(op, a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

/// Unary elementwise op with derivative expressed through input x and output y.
template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.value().data<T>();
    auto y = out.data<T>();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(fwd(x[i]));
  });
  return a.tape().record(std::move(out), {a}, [deriv](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      auto x = ctx.input(0).data<T>();
      auto y = ctx.output().data<T>();
      auto g = ctx.grad_output().data<T>();
      auto dx = ctx.input_grad(0).data<T>();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += static_cast<T>(g[i] * deriv(x[i], y[i]));
    });
  });
}

/// Contiguous runs of a 1-D shifted read: dst[i] = src[i + offset] under the
/// padding rule. Each run is (dst_begin, src_begin, length).
struct Run {
  std::int64_t dst, src, len;
};

std::vector<Run> shifted_runs(std::int64_t length, std::int64_t offset, Padding padding) {
  std::vector<Run> runs;
  if (padding == Padding::zero_fill) {
    const std::int64_t lo = std::max<std::int64_t>(0, -offset);
    const std::int64_t hi = std::min<std::int64_t>(length, length - offset);
    if (hi > lo) runs.push_back({lo, lo + offset, hi - lo});
    return runs;
  }
  const std::int64_t s = ((offset % length) + length) % length;
  if (length - s > 0) runs.push_back({0, s, length - s});
  if (s > 0) runs.push_back({length - s, 0, s});
  return runs;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  same_shape("add", a, b);
  Tensor out = a.value();
  out.add_(b.value());
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (ctx.needs_grad(i)) ctx.input_grad(i).add_(ctx.grad_output());
    }
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape("sub", a, b);
  Tensor out = a.value();
  Tensor neg = b.value();
  neg.scale_(-1.0);
  out.add_(neg);
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs_grad(0)) ctx.input_grad(0).add_(ctx.grad_output());
    if (ctx.needs_grad(1)) {
      Tensor g = ctx.grad_output();
      g.scale_(-1.0);
      ctx.input_grad(1).add_(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape("mul", a, b);
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.value().data<T>();
    auto y = b.value().data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  });
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      auto g = ctx.grad_output().data<T>();
      for (std::size_t k = 0; k < 2; ++k) {
        if (!ctx.needs_grad(k)) continue;
        auto other = ctx.input(1 - k).data<T>();
        auto d = ctx.input_grad(k).data<T>();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
      }
    });
  });
}

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp_min(const Var& a, double floor) {
  return unary(
      a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var sub_broadcast(const Var& a, const Var& s) {
  same_dtype("sub_broadcast", a, s);
  if (s.numel() != 1) throw ShapeError("sub_broadcast: subtrahend must be a single element");
  Tensor out = a.value();
  dispatch(a.dtype(), [&]<typename T>() {
    const T v = s.value().data<T>()[0];
    for (auto& x : out.data<T>()) x -= v;
  });
  return a.tape().record(std::move(out), {a, s}, [](BackwardContext& ctx) {
    if (ctx.needs_grad(0)) ctx.input_grad(0).add_(ctx.grad_output());
    if (ctx.needs_grad(1)) {
      dispatch(ctx.output().dtype(), [&]<typename T>() {
        double total = 0.0;
        for (auto g : ctx.grad_output().data<T>()) total += g;
        ctx.input_grad(1).data<T>()[0] -= static_cast<T>(total);
      });
    }
  });
}

Var sum(const Var& a) {
  Tensor out({1}, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    double total = 0.0;
    for (auto x : a.value().data<T>()) total += x;
    out.data<T>()[0] = static_cast<T>(total);
  });
  return a.tape().record(std::move(out), {a}, [](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      const T g = ctx.grad_output().data<T>()[0];
      for (auto& d : ctx.input_grad(0).data<T>()) d += g;
    });
  });
}

Var mean(const Var& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Var mean_last(const Var& a) {
  if (a.shape().empty()) throw ShapeError("mean_last: rank-0 input");
  const std::int64_t inner = a.shape().back();
  if (inner == 0) throw ShapeError("mean_last: empty trailing axis");
  const std::int64_t outer = a.numel() / inner;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.value().data<T>();
    auto o = out.data<T>();
    for (std::int64_t r = 0; r < outer; ++r) {
      double total = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) total += x[r * inner + i];
      o[r] = static_cast<T>(total / static_cast<double>(inner));
    }
  });
  return a.tape().record(std::move(out), {a}, [outer, inner](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      auto g = ctx.grad_output().data<T>();
      auto d = ctx.input_grad(0).data<T>();
      const T w = static_cast<T>(1.0 / static_cast<double>(inner));
      for (std::int64_t r = 0; r < outer; ++r) {
        for (std::int64_t i = 0; i < inner; ++i) d[r * inner + i] += g[r] * w;
      }
    });
  });
}

Var reduce_max(const Var& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("reduce_max: axis out of range for " + shape_string(s));
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t count = s[axis];
  if (count == 0) throw ShapeError("reduce_max: empty axis");
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape, a.dtype());
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(outer * inner));
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.value().data<T>();
    auto o = out.data<T>();
    for (std::int64_t p = 0; p < outer; ++p) {
      for (std::int64_t i = 0; i < inner; ++i) {
        std::int64_t best = p * count * inner + i;
        for (std::int64_t k = 1; k < count; ++k) {
          const std::int64_t idx = (p * count + k) * inner + i;
          if (x[idx] > x[best]) best = idx;
        }
        o[p * inner + i] = x[best];
        argmax[p * inner + i] = best;
      }
    }
  });
  return a.tape().record(std::move(out), {a}, [argmax = std::move(argmax)](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      auto g = ctx.grad_output().data<T>();
      auto d = ctx.input_grad(0).data<T>();
      for (std::size_t i = 0; i < argmax.size(); ++i) d[argmax[i]] += g[i];
    });
  });
}

Var max_pool(const Var& a, std::int64_t k) {
  const Shape& s = a.shape();
  if (s.size() < 2 || k < 1) throw ShapeError("max_pool: needs k >= 1 and at least two axes");
  const std::int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h % k != 0 || w % k != 0) {
    throw ShapeError("max_pool: " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " +
                     std::to_string(k));
  }
  const std::int64_t oh = h / k, ow = w / k, planes = a.numel() / (h * w);
  std::vector<std::int64_t> index;
  index.reserve(static_cast<std::size_t>(a.numel()));
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t r = 0; r < oh; ++r) {
      for (std::int64_t c = 0; c < ow; ++c) {
        for (std::int64_t i = 0; i < k; ++i) {
          for (std::int64_t j = 0; j < k; ++j) index.push_back(p * h * w + (r * k + i) * w + c * k + j);
        }
      }
    }
  }
  Shape window(s.begin(), s.end() - 2);
  window.insert(window.end(), {oh, ow, k * k});
  return reduce_max(gather(a, std::move(index), window), window.size() - 1);
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [](BackwardContext& ctx) {
    Tensor& d = ctx.input_grad(0);
    d.add_(ctx.grad_output().reshaped(d.shape()));
  });
}

Var gather(const Var& a, std::vector<std::int64_t> index, Shape out_shape) {
  if (shape_numel(out_shape) != static_cast<std::int64_t>(index.size())) {
    throw ShapeError("gather: " + std::to_string(index.size()) + " indices for output " + shape_string(out_shape));
  }
  const std::int64_t n = a.numel();
  for (auto i : index) {
    if (i < 0 || i >= n) throw ShapeError("gather: index " + std::to_string(i) + " out of range");
  }
  Tensor out(std::move(out_shape), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.value().data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < index.size(); ++i) o[i] = x[index[i]];
  });
  return a.tape().record(std::move(out), {a}, [index = std::move(index)](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      auto g = ctx.grad_output().data<T>();
      auto d = ctx.input_grad(0).data<T>();
      for (std::size_t i = 0; i < index.size(); ++i) d[index[i]] += g[i];
    });
  });
}

Var stack(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& s = parts[0].shape();
  if (axis > s.size()) throw ShapeError("stack: axis out of range");
  for (const auto& p : parts) same_shape("stack", parts[0], p);
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
  const auto count = static_cast<std::int64_t>(parts.size());
  Shape out_shape = s;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  Tensor out(out_shape, parts[0].dtype());
  dispatch(out.dtype(), [&]<typename T>() {
    auto o = out.data<T>();
    for (std::int64_t k = 0; k < count; ++k) {
      auto x = parts[static_cast<std::size_t>(k)].value().data<T>();
      for (std::int64_t p = 0; p < outer; ++p) {
        std::copy_n(x.begin() + p * inner, inner, o.begin() + (p * count + k) * inner);
      }
    }
  });
  return parts[0].tape().record(std::move(out), parts, [outer, inner, count](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      auto g = ctx.grad_output().data<T>();
      for (std::int64_t k = 0; k < count; ++k) {
        if (!ctx.needs_grad(static_cast<std::size_t>(k))) continue;
        auto d = ctx.input_grad(static_cast<std::size_t>(k)).data<T>();
        for (std::int64_t p = 0; p < outer; ++p) {
          for (std::int64_t i = 0; i < inner; ++i) d[p * inner + i] += g[(p * count + k) * inner + i];
        }
      }
    });
  });
}

Var matmul(const Var& a, const Var& b) {
  same_dtype("matmul", a, b);
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    MatMap<T>(out.data<T>().data(), m, n).noalias() =
        ConstMatMap<T>(a.value().data<T>().data(), m, k) * ConstMatMap<T>(b.value().data<T>().data(), k, n);
  });
  return a.tape().record(std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      ConstMatMap<T> g(ctx.grad_output().data<T>().data(), m, n);
      if (ctx.needs_grad(0)) {
        MatMap<T>(ctx.input_grad(0).data<T>().data(), m, k).noalias() +=
            g * ConstMatMap<T>(ctx.input(1).data<T>().data(), k, n).transpose();
      }
      if (ctx.needs_grad(1)) {
        MatMap<T>(ctx.input_grad(1).data<T>().data(), k, n).noalias() +=
            ConstMatMap<T>(ctx.input(0).data<T>().data(), m, k).transpose() * g;
      }
    });
  });
}

Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias) {
  same_dtype("linear", x, weight);
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const auto n = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  if (weight.shape()[1] != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_string(weight.shape()));
  }
  if (bias) {
    same_dtype("linear", x, *bias);
    if (bias->shape() != Shape{out_dim}) throw ShapeError("linear: bias shape " + shape_string(bias->shape()));
  }
  Tensor out({n, out_dim}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    MatMap<T> o(out.data<T>().data(), n, out_dim);
    o.noalias() = ConstMatMap<T>(x.value().data<T>().data(), n, in) *
                  ConstMatMap<T>(weight.value().data<T>().data(), out_dim, in).transpose();
    if (bias) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias->value().data<T>().data(), out_dim);
      o.rowwise() += b;
    }
  });
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return x.tape().record(std::move(out), std::move(inputs), [n, in, out_dim, has_bias](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      ConstMatMap<T> g(ctx.grad_output().data<T>().data(), n, out_dim);
      if (ctx.needs_grad(0)) {
        MatMap<T>(ctx.input_grad(0).data<T>().data(), n, in).noalias() +=
            g * ConstMatMap<T>(ctx.input(1).data<T>().data(), out_dim, in);
      }
      if (ctx.needs_grad(1)) {
        MatMap<T>(ctx.input_grad(1).data<T>().data(), out_dim, in).noalias() +=
            g.transpose() * ConstMatMap<T>(ctx.input(0).data<T>().data(), n, in);
      }
      if (has_bias && ctx.needs_grad(2)) {
        auto gv = ctx.grad_output().data<T>();
        auto db = ctx.input_grad(2).data<T>();
        for (std::int64_t c = 0; c < out_dim; ++c) {
          double total = 0.0;
          for (std::int64_t r = 0; r < n; ++r) total += gv[r * out_dim + c];
          db[c] += static_cast<T>(total);
        }
      }
    });
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  same_dtype("add_channel_bias", x, bias);
  if (x.shape().size() < 2) throw ShapeError("add_channel_bias: input needs a channel axis");
  const std::int64_t channels = x.shape()[1];
  if (bias.shape() != Shape{channels}) {
    throw ShapeError("add_channel_bias: bias " + shape_string(bias.shape()) + " for input " + shape_string(x.shape()));
  }
  const std::int64_t outer = x.shape()[0];
  const std::int64_t inner = x.numel() / std::max<std::int64_t>(1, outer * channels);
  Tensor out = x.value();
  dispatch(x.dtype(), [&]<typename T>() {
    auto o = out.data<T>();
    auto b = bias.value().data<T>();
    for (std::int64_t p = 0; p < outer; ++p) {
      for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t i = 0; i < inner; ++i) o[(p * channels + c) * inner + i] += b[c];
      }
    }
  });
  return x.tape().record(std::move(out), {x, bias}, [outer, channels, inner](BackwardContext& ctx) {
    if (ctx.needs_grad(0)) ctx.input_grad(0).add_(ctx.grad_output());
    if (ctx.needs_grad(1)) {
      dispatch(ctx.output().dtype(), [&]<typename T>() {
        auto g = ctx.grad_output().data<T>();
        auto d = ctx.input_grad(1).data<T>();
        for (std::int64_t c = 0; c < channels; ++c) {
          double total = 0.0;
          for (std::int64_t p = 0; p < outer; ++p) {
            for (std::int64_t i = 0; i < inner; ++i) total += g[(p * channels + c) * inner + i];
          }
          d[c] += static_cast<T>(total);
        }
      });
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, Padding padding) {
  same_dtype("conv2d", x, weight);
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const auto n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const auto co = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  if (weight.shape()[1] != ci) {
    throw ShapeError("conv2d: input has " + std::to_string(ci) + " channels, kernel expects " +
                     std::to_string(weight.shape()[1]));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel sides must be odd");
  if (padding == Padding::zero_fill && (h < kh || w < kw)) {
    throw ShapeError("conv2d: zero-fill input " + shape_string(x.shape()) + " smaller than kernel");
  }
  if (h < 1 || w < 1) throw ShapeError("conv2d: empty spatial grid");
  if (bias) {
    same_dtype("conv2d", x, *bias);
    if (bias->shape() != Shape{co}) throw ShapeError("conv2d: bias shape " + shape_string(bias->shape()));
  }

  // Row/column runs for every kernel tap, used to build im2col matrices.
  struct Tap {
    std::vector<Run> rows, cols;
  };
  std::vector<Tap> taps;
  for (std::int64_t ki = 0; ki < kh; ++ki) {
    for (std::int64_t kj = 0; kj < kw; ++kj) {
      taps.push_back({shifted_runs(h, ki - kh / 2, padding), shifted_runs(w, kj - kw / 2, padding)});
    }
  }
  const std::int64_t kk = kh * kw, hw = h * w, depth = ci * kk;
  // cols[(ic,tap), (r,c)] = x[ic, r+di, c+dj] under the padding rule.
  const auto im2col = [taps, ci, kk, w, hw]<typename T>(const T* src, T* cols) {
    std::fill_n(cols, ci * kk * hw, T(0));
    for (std::int64_t ic = 0; ic < ci; ++ic) {
      for (std::int64_t t = 0; t < kk; ++t) {
        T* dst = cols + (ic * kk + t) * hw;
        const T* plane = src + ic * hw;
        for (const auto& rr : taps[static_cast<std::size_t>(t)].rows) {
          for (std::int64_t r = 0; r < rr.len; ++r) {
            for (const auto& cr : taps[static_cast<std::size_t>(t)].cols) {
              std::copy_n(plane + (rr.src + r) * w + cr.src, cr.len, dst + (rr.dst + r) * w + cr.dst);
            }
          }
        }
      }
    }
  };
  const auto col2im = [taps, ci, kk, w, hw]<typename T>(const T* cols, T* dst) {
    for (std::int64_t ic = 0; ic < ci; ++ic) {
      for (std::int64_t t = 0; t < kk; ++t) {
        const T* src = cols + (ic * kk + t) * hw;
        T* plane = dst + ic * hw;
        for (const auto& rr : taps[static_cast<std::size_t>(t)].rows) {
          for (std::int64_t r = 0; r < rr.len; ++r) {
            for (const auto& cr : taps[static_cast<std::size_t>(t)].cols) {
              T* d = plane + (rr.src + r) * w + cr.src;
              const T* s = src + (rr.dst + r) * w + cr.dst;
              for (std::int64_t c = 0; c < cr.len; ++c) d[c] += s[c];
            }
          }
        }
      }
    }
  };

  Tensor out({n, co, h, w}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.value().data<T>();
    auto o = out.data<T>();
    ConstMatMap<T> wm(weight.value().data<T>().data(), co, depth);
    std::vector<T> cols(static_cast<std::size_t>(depth * hw));
    for (std::int64_t b = 0; b < n; ++b) {
      im2col.template operator()<T>(xv.data() + b * ci * hw, cols.data());
      MatMap<T> om(o.data() + b * co * hw, co, hw);
      om.noalias() = wm * ConstMatMap<T>(cols.data(), depth, hw);
      if (bias) {
        auto bv = bias->value().data<T>();
        for (std::int64_t oc = 0; oc < co; ++oc) om.row(oc).array() += bv[oc];
      }
    }
  });

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return x.tape().record(
      std::move(out), std::move(inputs),
      [n, ci, hw, co, depth, has_bias, im2col, col2im](BackwardContext& ctx) {
        dispatch(ctx.output().dtype(), [&]<typename T>() {
          auto g = ctx.grad_output().data<T>();
          auto xv = ctx.input(0).data<T>();
          ConstMatMap<T> wm(ctx.input(1).data<T>().data(), co, depth);
          const bool need_x = ctx.needs_grad(0), need_w = ctx.needs_grad(1);
          T* dx = need_x ? ctx.input_grad(0).data<T>().data() : nullptr;
          std::vector<T> cols(static_cast<std::size_t>(depth * hw));
          RowMat<T> dw_acc;
          if (need_w) dw_acc = RowMat<T>::Zero(co, depth);
          for (std::int64_t b = 0; b < n; ++b) {
            ConstMatMap<T> gm(g.data() + b * co * hw, co, hw);
            if (need_w) {
              im2col.template operator()<T>(xv.data() + b * ci * hw, cols.data());
              dw_acc.noalias() += gm * ConstMatMap<T>(cols.data(), depth, hw).transpose();
            }
            if (need_x) {
              MatMap<T>(cols.data(), depth, hw).noalias() = wm.transpose() * gm;
              col2im.template operator()<T>(cols.data(), dx + b * ci * hw);
            }
          }
          if (need_w) MatMap<T>(ctx.input_grad(1).data<T>().data(), co, depth) += dw_acc;
          if (has_bias && ctx.needs_grad(2)) {
            auto db = ctx.input_grad(2).data<T>();
            for (std::int64_t oc = 0; oc < co; ++oc) {
              double total = 0.0;
              for (std::int64_t b = 0; b < n; ++b) {
                for (std::int64_t i = 0; i < hw; ++i) total += g[(b * co + oc) * hw + i];
              }
              db[oc] += static_cast<T>(total);
            }
          }
        });
      });
}

Var block_matmul(const Var& blocks, const Var& x) {
  same_dtype("block_matmul", blocks, x);
  require_rank("block_matmul", blocks, 3);
  require_rank("block_matmul", x, 2);
  const auto nb = blocks.shape()[0], n_out = blocks.shape()[1], n_in = blocks.shape()[2];
  const auto rows = x.shape()[0];
  if (x.shape()[1] != n_in) {
    throw ShapeError("block_matmul: blocks " + shape_string(blocks.shape()) + " cannot act on " +
                     shape_string(x.shape()));
  }
  Tensor out({rows, nb, n_out}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    ConstMatMap<T> xm(x.value().data<T>().data(), rows, n_in);
    for (std::int64_t b = 0; b < nb; ++b) {
      ConstMatMap<T> m(blocks.value().data<T>().data() + b * n_out * n_in, n_out, n_in);
      StridedMap<T> z(out.data<T>().data() + b * n_out, rows, n_out, Eigen::OuterStride<>(nb * n_out));
      z.noalias() = xm * m.transpose();
    }
  });
  return x.tape().record(std::move(out), {blocks, x}, [nb, n_out, n_in, rows](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      const T* g = ctx.grad_output().data<T>().data();
      if (ctx.needs_grad(0)) {
        ConstMatMap<T> xm(ctx.input(1).data<T>().data(), rows, n_in);
        T* dm = ctx.input_grad(0).data<T>().data();
        for (std::int64_t b = 0; b < nb; ++b) {
          ConstStridedMap<T> gz(g + b * n_out, rows, n_out, Eigen::OuterStride<>(nb * n_out));
          MatMap<T>(dm + b * n_out * n_in, n_out, n_in).noalias() += gz.transpose() * xm;
        }
      }
      if (ctx.needs_grad(1)) {
        MatMap<T> dx(ctx.input_grad(1).data<T>().data(), rows, n_in);
        for (std::int64_t b = 0; b < nb; ++b) {
          ConstStridedMap<T> gz(g + b * n_out, rows, n_out, Eigen::OuterStride<>(nb * n_out));
          ConstMatMap<T> m(ctx.input(0).data<T>().data() + b * n_out * n_in, n_out, n_in);
          dx.noalias() += gz * m;
        }
      }
    });
  });
}

Var mix(const Var& z, const Var& coef) {
  same_dtype("mix", z, coef);
  require_rank("mix", z, 3);
  require_rank("mix", coef, 3);
  const auto n = z.shape()[0], j = z.shape()[1], len = z.shape()[2];
  const auto cn = coef.shape()[0], o = coef.shape()[1];
  if (coef.shape()[2] != j || (cn != 1 && cn != n)) {
    throw ShapeError("mix: coefficients " + shape_string(coef.shape()) + " incompatible with " +
                     shape_string(z.shape()));
  }
  Tensor out({n, o, len}, z.dtype());
  dispatch(z.dtype(), [&]<typename T>() {
    for (std::int64_t i = 0; i < n; ++i) {
      ConstMatMap<T> c(coef.value().data<T>().data() + (cn == 1 ? 0 : i) * o * j, o, j);
      ConstMatMap<T> zi(z.value().data<T>().data() + i * j * len, j, len);
      MatMap<T>(out.data<T>().data() + i * o * len, o, len).noalias() = c * zi;
    }
  });
  return z.tape().record(std::move(out), {z, coef}, [n, j, len, cn, o](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      const T* g = ctx.grad_output().data<T>().data();
      const bool need_z = ctx.needs_grad(0), need_c = ctx.needs_grad(1);
      for (std::int64_t i = 0; i < n; ++i) {
        ConstMatMap<T> gi(g + i * o * len, o, len);
        const std::int64_t coff = (cn == 1 ? 0 : i) * o * j;
        if (need_z) {
          ConstMatMap<T> c(ctx.input(1).data<T>().data() + coff, o, j);
          MatMap<T>(ctx.input_grad(0).data<T>().data() + i * j * len, j, len).noalias() += c.transpose() * gi;
        }
        if (need_c) {
          ConstMatMap<T> zi(ctx.input(0).data<T>().data() + i * j * len, j, len);
          MatMap<T>(ctx.input_grad(1).data<T>().data() + coff, o, j).noalias() += gi * zi.transpose();
        }
      }
    });
  });
}

Var mse_loss(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank("cross_entropy", logits, 2);
  const auto n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) throw ShapeError("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
  }
  Tensor probs({n, k}, logits.dtype());
  Tensor out({1}, logits.dtype());
  std::vector<int> y(labels.begin(), labels.end());
  dispatch(logits.dtype(), [&]<typename T>() {
    auto x = logits.value().data<T>();
    auto p = probs.data<T>();
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const T* row = x.data() + i * k;
      const double mx = *std::max_element(row, row + k);
      double z = 0.0;
      for (std::int64_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
      for (std::int64_t c = 0; c < k; ++c) p[i * k + c] = static_cast<T>(std::exp(row[c] - mx) / z);
      total += -(row[y[static_cast<std::size_t>(i)]] - mx - std::log(z));
    }
    out.data<T>()[0] = static_cast<T>(total / static_cast<double>(n));
  });
  return logits.tape().record(std::move(out), {logits}, [probs = std::move(probs), y = std::move(y), n, k](BackwardContext& ctx) {
    dispatch(ctx.output().dtype(), [&]<typename T>() {
      const T g = ctx.grad_output().data<T>()[0] / static_cast<T>(n);
      auto p = probs.data<T>();
      auto d = ctx.input_grad(0).data<T>();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < k; ++c) {
          const T target = c == y[static_cast<std::size_t>(i)] ? T(1) : T(0);
          d[i * k + c] += g * (p[i * k + c] - target);
        }
      }
    });
  });
}

}  // namespace symclone::ops
