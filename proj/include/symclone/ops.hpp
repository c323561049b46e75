#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "symclone/autodiff.hpp"
#include "symclone/padding.hpp"

// Differentiable primitives recorded on a Tape. All inputs of one op must
// share a dtype; shape rules are stated per op.
namespace symclone::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
/// a - s where s holds a single element.
Var sub_broadcast(const Var& a, const Var& s);
Var square(const Var& a);
Var log(const Var& a);
Var relu(const Var& a);
Var clamp_min(const Var& a, double floor);

Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over the trailing axis.
Var mean_last(const Var& a);
/// Maximum over `axis`; gradient routes to the first maximal entry.
Var reduce_max(const Var& a, std::size_t axis);

/// k x k max pooling with stride k over the last two axes (both divisible by k).
Var max_pool(const Var& a, std::int64_t k);
Var reshape(const Var& a, Shape shape);
/// out.flat[i] = a.flat[index[i]]; `out_shape` must hold index.size() elements.
Var gather(const Var& a, std::vector<std::int64_t> index, Shape out_shape);
/// Stacks equally shaped values along a new axis.
Var stack(const std::vector<Var>& parts, std::size_t axis);

/// [M,K] x [K,N] -> [M,N]
Var matmul(const Var& a, const Var& b);
/// x [n,in], weight [out,in], optional bias [out] -> [n,out]
Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias);
/// x [n,C,...] plus bias [C] broadcast over batch and trailing axes.
Var add_channel_bias(const Var& x, const Var& bias);

/// Same-size cross-correlation. x [n,Ci,H,W], weight [Co,Ci,kh,kw] with odd
/// kernel sides, optional bias [Co] -> [n,Co,H,W].
Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, Padding padding);

/// blocks [B,N,N], x [R,N] -> [R,B,N] with out[r,b,:] = blocks[b] * x[r,:].
Var block_matmul(const Var& blocks, const Var& x);
/// z [n,J,L], coef [n or 1, O, J] -> [n,O,L] with out[i] = coef[i] * z[i].
Var mix(const Var& z, const Var& coef);

/// Mean over all elements of squared differences.
Var mse_loss(const Var& pred, const Var& target);
/// Mean softmax cross-entropy; logits [n,K], labels in [0,K).
Var cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace symclone::ops
