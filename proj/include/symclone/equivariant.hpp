#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "symclone/autodiff.hpp"
#include "symclone/groups.hpp"
#include "symclone/model.hpp"
#include "symclone/rng.hpp"

namespace symclone {

/// Teacher kernel: weights [Co,Ci,3,3], optional bias [Co].
struct ConvKernel {
  ParamPtr weight;
  ParamPtr bias;
  Padding padding = Padding::zero_fill;
};

ConvKernel make_conv_kernel(const std::string& name, std::int64_t out_channels, std::int64_t in_channels,
                            Padding padding, SeededRng& rng, DType dtype = DType::f32, bool with_bias = false);

/// Same-size cross-correlation on [Ci,H,W] or [n,Ci,H,W].
Tensor conv2d(const Tensor& x, const ConvKernel& kernel);
Var conv2d(Tape& tape, const Var& x, const ConvKernel& kernel);

/// Rotates the trailing 3x3 (or any square) kernel axes clockwise by g.
Var rotate_kernel(const Var& weight, const C4Element& g);

/// x [n,Ci,H,H], weight [Co,Ci,k,k] -> [n,Co,4,H,H]; orientation s uses the
/// kernel rotated by s clockwise quarter turns.
Var lifting_conv(const Var& x, const Var& weight, Padding padding);
/// f [n,Ci,4,H,H], psi [Co,Ci,4,k,k] -> [n,Co,4,H,H] with
/// out(s) = sum_h conv2d(f(h), rotate(psi((h-s) mod 4), s)).
Var group_conv(const Var& f, const Var& psi, Padding padding);
/// Maximum over the orientation axis: [n,C,4,H,W] -> [n,C,H,W].
Var group_pool(const Var& f);

/// Single-sample forms: x [1,H,H] with kernel [3,3] -> [4,H,H].
Tensor lifting_conv(const Tensor& x, const Tensor& kernel, Padding padding);
/// f [4,H,H] with psi [4,3,3] -> [4,H,H].
Tensor group_conv(const Tensor& f, const Tensor& psi, Padding padding);
/// f [4,H,W] -> [1,H,W].
Tensor group_pool(const Tensor& f);

enum class ClassifierKind { mlp, cnn, gcnn };

ClassifierKind parse_classifier_kind(const std::string& name);
std::string to_string(ClassifierKind kind);

/// Layer stack for the reference classifiers. Conv stacks use ReLU between
/// layers, global average pooling, then an optional hidden layer and a
/// linear head.
struct ClassifierSpec {
  ClassifierKind kind = ClassifierKind::cnn;
  std::int64_t height = 14;
  std::int64_t width = 14;
  std::vector<std::int64_t> channels{8, 8};
  std::vector<std::int64_t> mlp_hidden{256, 256};
  std::int64_t head_hidden = 0;
  std::int64_t classes = 10;
  /// Conv layer indices followed by 2x2 max pooling.
  std::vector<std::int64_t> pool_after;
  Padding padding = Padding::zero_fill;
  DType dtype = DType::f32;
};

/// Grid side after layer `layer` given the pooling schedule.
std::int64_t pooled_side(std::int64_t side, const std::vector<std::int64_t>& pool_after, std::int64_t layer);
bool pools_after(const std::vector<std::int64_t>& pool_after, std::int64_t layer);

std::unique_ptr<Classifier> build_reference_classifier(const ClassifierSpec& spec, SeededRng& rng);

/// Global average pool + optional hidden ReLU layer + linear output. Shared
/// by the reference and cloned classifiers.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::int64_t features, std::int64_t hidden, std::int64_t classes, SeededRng& rng, DType dtype);

  /// features [n,C,...spatial] -> logits [n,classes]
  Var forward(Tape& tape, const Var& features) const;
  std::vector<ParamPtr> parameters() const;
  std::int64_t classes() const noexcept { return classes_; }

 private:
  std::int64_t features_ = 0, classes_ = 0;
  ParamPtr w1_, b1_, w2_, b2_;
};

/// He-normal initialised tensor with std sqrt(2 / fan_in).
Tensor he_normal(const Shape& shape, std::int64_t fan_in, SeededRng& rng, DType dtype);

}  // namespace symclone
