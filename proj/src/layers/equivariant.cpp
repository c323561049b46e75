#include "symclone/equivariant.hpp"

#include <algorithm>
#include <cmath>

#include "symclone/ops.hpp"

namespace symclone {

Tensor he_normal(const Shape& shape, std::int64_t fan_in, SeededRng& rng, DType dtype) {
  Tensor t = sample_standard_normal(rng, shape, dtype);
  t.scale_(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return t;
}

Tensor Classifier::logits(const Tensor& images) {
  Tape tape;
  return forward(tape, tape.constant(images)).value();
}

ConvKernel make_conv_kernel(const std::string& name, std::int64_t out_channels, std::int64_t in_channels,
                            Padding padding, SeededRng& rng, DType dtype, bool with_bias) {
  ConvKernel k;
  k.weight = make_param(name + ".weight",
                        sample_standard_normal(rng, {out_channels, in_channels, 3, 3}, dtype), ParamRole::kernel);
  if (with_bias) k.bias = make_param(name + ".bias", Tensor({out_channels}, dtype), ParamRole::kernel);
  k.padding = padding;
  return k;
}

Var conv2d(Tape& tape, const Var& x, const ConvKernel& kernel) {
  std::optional<Var> bias;
  if (kernel.bias) bias = tape.param(kernel.bias);
  return ops::conv2d(x, tape.param(kernel.weight), bias, kernel.padding);
}

Tensor conv2d(const Tensor& x, const ConvKernel& kernel) {
  const bool single = x.rank() == 3;
  if (!single && x.rank() != 4) throw ShapeError("conv2d: expected [Ci,H,W] or [n,Ci,H,W], got " + shape_string(x.shape()));
  Tape tape;
  Tensor batched = single ? x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  Tensor y = conv2d(tape, tape.constant(std::move(batched)), kernel).value();
  if (single) y = std::move(y).reshaped({y.dim(1), y.dim(2), y.dim(3)});
  return y;
}

Var rotate_kernel(const Var& weight, const C4Element& g) {
  const Shape& s = weight.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
    throw ShapeError("rotate_kernel: trailing axes must be square, got " + shape_string(s));
  }
  const std::int64_t side = s.back(), plane = side * side;
  const auto map = rotation_index_map(side, g);
  const std::int64_t outer = weight.numel() / plane;
  std::vector<std::int64_t> index(static_cast<std::size_t>(weight.numel()));
  for (std::int64_t p = 0; p < outer; ++p) {
    for (std::int64_t i = 0; i < plane; ++i) index[static_cast<std::size_t>(p * plane + i)] = p * plane + map[static_cast<std::size_t>(i)];
  }
  return ops::gather(weight, std::move(index), s);
}

Var lifting_conv(const Var& x, const Var& weight, Padding padding) {
  if (x.shape().size() != 4 || x.shape()[2] != x.shape()[3]) {
    throw ShapeError("lifting_conv: expected square input [n,Ci,H,H], got " + shape_string(x.shape()));
  }
  std::vector<Var> orientations;
  for (const auto& g : C4Element::all()) {
    orientations.push_back(ops::conv2d(x, rotate_kernel(weight, g), std::nullopt, padding));
  }
  return ops::stack(orientations, 2);
}

Var group_conv(const Var& f, const Var& psi, Padding padding) {
  const Shape& fs = f.shape();
  const Shape& ps = psi.shape();
  if (fs.size() != 5 || fs[2] != 4) throw ShapeError("group_conv: expected [n,Ci,4,H,W], got " + shape_string(fs));
  if (ps.size() != 5 || ps[2] != 4 || ps[1] != fs[1] || ps[3] != ps[4]) {
    throw ShapeError("group_conv: filter " + shape_string(ps) + " incompatible with input " + shape_string(fs));
  }
  const std::int64_t n = fs[0], ci = fs[1], h = fs[3], w = fs[4];
  const std::int64_t co = ps[0], side = ps[3], plane = side * side;
  const Var flat_input = ops::reshape(f, {n, ci * 4, h, w});
  std::vector<Var> orientations;
  for (const auto& g : C4Element::all()) {
    const auto map = rotation_index_map(side, g);
    std::vector<std::int64_t> index;
    index.reserve(static_cast<std::size_t>(psi.numel()));
    for (std::int64_t o = 0; o < co; ++o) {
      for (std::int64_t c = 0; c < ci; ++c) {
        for (std::int64_t hh = 0; hh < 4; ++hh) {
          const std::int64_t src = ((o * ci + c) * 4 + (hh - g.k() + 4) % 4) * plane;
          for (std::int64_t i = 0; i < plane; ++i) index.push_back(src + map[static_cast<std::size_t>(i)]);
        }
      }
    }
    const Var kernel = ops::gather(psi, std::move(index), {co, ci * 4, side, side});
    orientations.push_back(ops::conv2d(flat_input, kernel, std::nullopt, padding));
  }
  return ops::stack(orientations, 2);
}

Var group_pool(const Var& f) {
  if (f.shape().size() != 5 || f.shape()[2] != 4) {
    throw ShapeError("group_pool: expected [n,C,4,H,W], got " + shape_string(f.shape()));
  }
  return ops::reduce_max(f, 2);
}

Tensor lifting_conv(const Tensor& x, const Tensor& kernel, Padding padding) {
  if (x.rank() != 3 || x.dim(0) != 1) throw ShapeError("lifting_conv: expected [1,H,H], got " + shape_string(x.shape()));
  if (kernel.numel() != 9) throw ShapeError("lifting_conv: expected a 3x3 kernel");
  Tape tape;
  const Var xv = tape.constant(x.reshaped({1, 1, x.dim(1), x.dim(2)}));
  const Var wv = tape.constant(kernel.reshaped({1, 1, 3, 3}));
  Tensor y = lifting_conv(xv, wv, padding).value();
  return std::move(y).reshaped({4, x.dim(1), x.dim(2)});
}

Tensor group_conv(const Tensor& f, const Tensor& psi, Padding padding) {
  if (f.rank() != 3 || f.dim(0) != 4) throw ShapeError("group_conv: expected [4,H,W], got " + shape_string(f.shape()));
  if (psi.numel() != 36) throw ShapeError("group_conv: expected a [4,3,3] filter");
  Tape tape;
  const Var fv = tape.constant(f.reshaped({1, 1, 4, f.dim(1), f.dim(2)}));
  const Var pv = tape.constant(psi.reshaped({1, 1, 4, 3, 3}));
  Tensor y = group_conv(fv, pv, padding).value();
  return std::move(y).reshaped(f.shape());
}

Tensor group_pool(const Tensor& f) {
  if (f.rank() != 3 || f.dim(0) != 4) throw ShapeError("group_pool: expected [4,H,W], got " + shape_string(f.shape()));
  Tape tape;
  Tensor y = group_pool(tape.constant(f.reshaped({1, 1, 4, f.dim(1), f.dim(2)}))).value();
  return std::move(y).reshaped({1, f.dim(1), f.dim(2)});
}

ClassifierKind parse_classifier_kind(const std::string& name) {
  if (name == "mlp") return ClassifierKind::mlp;
  if (name == "cnn") return ClassifierKind::cnn;
  if (name == "gcnn") return ClassifierKind::gcnn;
  throw Error("unknown classifier kind '" + name + "'");
}

std::string to_string(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::mlp: return "mlp";
    case ClassifierKind::cnn: return "cnn";
    case ClassifierKind::gcnn: return "gcnn";
  }
  return "?";
}

ClassifierHead::ClassifierHead(std::int64_t features, std::int64_t hidden, std::int64_t classes, SeededRng& rng,
                               DType dtype)
    : features_(features), classes_(classes) {
  std::int64_t width = features;
  if (hidden > 0) {
    w1_ = make_param("head.hidden.weight", he_normal({hidden, features}, features, rng, dtype), ParamRole::head);
    b1_ = make_param("head.hidden.bias", Tensor({hidden}, dtype), ParamRole::head);
    width = hidden;
  }
  w2_ = make_param("head.out.weight", he_normal({classes, width}, width, rng, dtype), ParamRole::head);
  b2_ = make_param("head.out.bias", Tensor({classes}, dtype), ParamRole::head);
}

Var ClassifierHead::forward(Tape& tape, const Var& features) const {
  const Shape& s = features.shape();
  if (s.size() < 2 || s[1] != features_) {
    throw ShapeError("classifier head expects [n," + std::to_string(features_) + ",...], got " + shape_string(s));
  }
  Var pooled = features;
  if (s.size() > 2) {
    pooled = ops::mean_last(ops::reshape(features, {s[0], s[1], features.numel() / (s[0] * s[1])}));
  }
  if (w1_) pooled = ops::relu(ops::linear(pooled, tape.param(w1_), tape.param(b1_)));
  return ops::linear(pooled, tape.param(w2_), tape.param(b2_));
}

std::vector<ParamPtr> ClassifierHead::parameters() const {
  std::vector<ParamPtr> out;
  if (w1_) out = {w1_, b1_};
  out.push_back(w2_);
  out.push_back(b2_);
  return out;
}

namespace {

void check_images(const Var& images, std::int64_t h, std::int64_t w, const std::string& kind) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != h || s[3] != w) {
    throw ShapeError(kind + " expects images [n,1," + std::to_string(h) + "," + std::to_string(w) + "], got " +
                     shape_string(s));
  }
}

class PlainMlpClassifier final : public Classifier {
 public:
  PlainMlpClassifier(const ClassifierSpec& spec, SeededRng& rng) : spec_(spec) {
    std::int64_t width = spec.height * spec.width;
    for (std::size_t i = 0; i < spec.mlp_hidden.size(); ++i) {
      const auto out = spec.mlp_hidden[i];
      const auto name = "mlp.layer" + std::to_string(i);
      weights_.push_back(make_param(name + ".weight", he_normal({out, width}, width, rng, spec.dtype), ParamRole::structure));
      biases_.push_back(make_param(name + ".bias", Tensor({out}, spec.dtype), ParamRole::structure));
      width = out;
    }
    weights_.push_back(make_param("head.out.weight", he_normal({spec.classes, width}, width, rng, spec.dtype), ParamRole::head));
    biases_.push_back(make_param("head.out.bias", Tensor({spec.classes}, spec.dtype), ParamRole::head));
  }

  Var forward(Tape& tape, const Var& images) override {
    check_images(images, spec_.height, spec_.width, "mlp");
    Var h = ops::reshape(images, {images.shape()[0], spec_.height * spec_.width});
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = ops::linear(h, tape.param(weights_[i]), tape.param(biases_[i]));
      if (i + 1 < weights_.size()) h = ops::relu(h);
    }
    return h;
  }

  std::vector<ParamPtr> parameters() const override {
    std::vector<ParamPtr> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      out.push_back(weights_[i]);
      out.push_back(biases_[i]);
    }
    return out;
  }
  std::string kind() const override { return "mlp"; }
  std::int64_t classes() const override { return spec_.classes; }

 private:
  ClassifierSpec spec_;
  std::vector<ParamPtr> weights_, biases_;
};

class CnnClassifier final : public Classifier {
 public:
  CnnClassifier(const ClassifierSpec& spec, SeededRng& rng) : spec_(spec) {
    std::int64_t in = 1;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      const auto name = "conv" + std::to_string(i);
      ConvKernel k;
      k.weight = make_param(name + ".weight", he_normal({spec.channels[i], in, 3, 3}, in * 9, rng, spec.dtype));
      k.bias = make_param(name + ".bias", Tensor({spec.channels[i]}, spec.dtype));
      k.padding = spec.padding;
      layers_.push_back(std::move(k));
      in = spec.channels[i];
    }
    head_ = ClassifierHead(in, spec.head_hidden, spec.classes, rng, spec.dtype);
  }

  Var forward(Tape& tape, const Var& images) override {
    check_images(images, spec_.height, spec_.width, "cnn");
    Var h = images;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = ops::relu(conv2d(tape, h, layers_[i]));
      if (pools_after(spec_.pool_after, static_cast<std::int64_t>(i))) h = ops::max_pool(h, 2);
    }
    return head_.forward(tape, h);
  }

  std::vector<ParamPtr> parameters() const override {
    std::vector<ParamPtr> out;
    for (const auto& k : layers_) {
      out.push_back(k.weight);
      out.push_back(k.bias);
    }
    for (auto& p : head_.parameters()) out.push_back(p);
    return out;
  }
  std::string kind() const override { return "cnn"; }
  std::int64_t classes() const override { return spec_.classes; }

 private:
  ClassifierSpec spec_;
  std::vector<ConvKernel> layers_;
  ClassifierHead head_;
};

class GcnnClassifier final : public Classifier {
 public:
  GcnnClassifier(const ClassifierSpec& spec, SeededRng& rng) : spec_(spec) {
    std::int64_t in = 1;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      const auto name = "gconv" + std::to_string(i);
      const auto out = spec.channels[i];
      if (i == 0) {
        weights_.push_back(make_param(name + ".weight", he_normal({out, in, 3, 3}, in * 9, rng, spec.dtype)));
      } else {
        weights_.push_back(make_param(name + ".weight", he_normal({out, in, 4, 3, 3}, in * 36, rng, spec.dtype)));
      }
      biases_.push_back(make_param(name + ".bias", Tensor({out}, spec.dtype)));
      in = out;
    }
    head_ = ClassifierHead(in, spec.head_hidden, spec.classes, rng, spec.dtype);
  }

  Var forward(Tape& tape, const Var& images) override {
    check_images(images, spec_.height, spec_.width, "gcnn");
    if (spec_.height != spec_.width) throw ShapeError("gcnn needs square images");
    Var h;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const Var w = tape.param(weights_[i]);
      h = i == 0 ? lifting_conv(images, w, spec_.padding) : group_conv(h, w, spec_.padding);
      h = ops::relu(ops::add_channel_bias(h, tape.param(biases_[i])));
      if (pools_after(spec_.pool_after, static_cast<std::int64_t>(i))) h = ops::max_pool(h, 2);
    }
    return head_.forward(tape, group_pool(h));
  }

  std::vector<ParamPtr> parameters() const override {
    std::vector<ParamPtr> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      out.push_back(weights_[i]);
      out.push_back(biases_[i]);
    }
    for (auto& p : head_.parameters()) out.push_back(p);
    return out;
  }
  std::string kind() const override { return "gcnn"; }
  std::int64_t classes() const override { return spec_.classes; }

 private:
  ClassifierSpec spec_;
  std::vector<ParamPtr> weights_, biases_;
  ClassifierHead head_;
};

}  // namespace

bool pools_after(const std::vector<std::int64_t>& pool_after, std::int64_t layer) {
  return std::find(pool_after.begin(), pool_after.end(), layer) != pool_after.end();
}

std::int64_t pooled_side(std::int64_t side, const std::vector<std::int64_t>& pool_after, std::int64_t layer) {
  for (std::int64_t i = 0; i <= layer; ++i) {
    if (pools_after(pool_after, i)) side /= 2;
  }
  return side;
}

std::unique_ptr<Classifier> build_reference_classifier(const ClassifierSpec& spec, SeededRng& rng) {
  if (spec.classes < 2) throw ShapeError("classifier needs at least 2 classes");
  if (spec.height < 1 || spec.width < 1) throw ShapeError("classifier needs a non-empty image grid");
  if (spec.kind == ClassifierKind::mlp) {
    for (auto w : spec.mlp_hidden) {
      if (w < 1) throw ShapeError("mlp hidden widths must be positive");
    }
    return std::make_unique<PlainMlpClassifier>(spec, rng);
  }
  if (spec.channels.empty()) throw ShapeError(to_string(spec.kind) + " needs at least one conv layer");
  {
    std::int64_t h = spec.height, w = spec.width;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      if (!pools_after(spec.pool_after, static_cast<std::int64_t>(i))) continue;
      if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("pooling after layer " + std::to_string(i) + " needs an even grid, got " + std::to_string(h) +
                         "x" + std::to_string(w));
      }
      h /= 2;
      w /= 2;
    }
  }
  for (auto c : spec.channels) {
    if (c < 1) throw ShapeError("inconsistent channel chain: channel counts must be positive");
  }
  if (spec.head_hidden < 0) throw ShapeError("head_hidden must be non-negative");
  if (spec.kind == ClassifierKind::cnn) return std::make_unique<CnnClassifier>(spec, rng);
  if (spec.height != spec.width) throw ShapeError("gcnn needs square images");
  return std::make_unique<GcnnClassifier>(spec, rng);
}

}  // namespace symclone
