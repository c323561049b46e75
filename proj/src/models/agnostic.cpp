#include "symclone/agnostic.hpp"

#include <algorithm>
#include <cmath>

#include "symclone/ops.hpp"

namespace symclone {

StudentKind parse_student_kind(const std::string& name) {
  if (name == "blockmlp9") return StudentKind::blockmlp9;
  if (name == "blockmlp_approx") return StudentKind::blockmlp_approx;
  if (name == "mlp2gcnn") return StudentKind::mlp2gcnn;
  if (name == "mlp2gcnn_approx") return StudentKind::mlp2gcnn_approx;
  throw Error("unknown student kind '" + name + "'");
}

std::string to_string(StudentKind kind) {
  switch (kind) {
    case StudentKind::blockmlp9: return "blockmlp9";
    case StudentKind::blockmlp_approx: return "blockmlp_approx";
    case StudentKind::mlp2gcnn: return "mlp2gcnn";
    case StudentKind::mlp2gcnn_approx: return "mlp2gcnn_approx";
  }
  return "?";
}

std::int64_t StudentSpec::subunits() const noexcept {
  return kind == StudentKind::mlp2gcnn || kind == StudentKind::mlp2gcnn_approx ? 4 : 1;
}

bool StudentSpec::approx() const noexcept {
  return kind == StudentKind::blockmlp_approx || kind == StudentKind::mlp2gcnn_approx;
}

namespace {

void validate(const StudentSpec& spec) {
  if (spec.height < 1 || spec.width < 1) throw ShapeError("student grid must be at least 1x1");
  if (!spec.approx() && spec.blocks != 9) {
    throw ShapeError(to_string(spec.kind) + " uses the direct combiner and needs exactly 9 blocks, got " +
                     std::to_string(spec.blocks));
  }
  if (spec.approx() && (spec.blocks < 7 || spec.blocks > 10)) {
    throw ShapeError("approx students take 7 to 10 blocks, got " + std::to_string(spec.blocks));
  }
  if (spec.approx() && spec.embed_dim < 1) throw ShapeError("embed_dim must be positive");
}

std::string unit_name(std::int64_t s) { return "unit" + std::to_string(s); }

}  // namespace

StudentLayer::StudentLayer(const StudentSpec& spec, SeededRng& rng) : spec_(spec) {
  validate(spec);
  const std::int64_t n = spec.size(), b = spec.blocks, d = spec.embed_dim;
  for (std::int64_t s = 0; s < spec.subunits(); ++s) {
    Tensor m = sample_standard_normal(rng, {b, n, n}, spec.dtype);
    m.scale_(1.0 / std::sqrt(static_cast<double>(n)));
    blocks_.push_back(make_param(unit_name(s) + ".blocks", std::move(m), ParamRole::structure));
  }
  if (spec.approx()) {
    embed_w_ = make_param("embed.weight", he_normal({d, 9}, 9, rng, spec.dtype), ParamRole::structure);
    embed_b_ = make_param("embed.bias", Tensor({d}, spec.dtype), ParamRole::structure);
    for (std::int64_t s = 0; s < spec.subunits(); ++s) {
      Tensor w = sample_standard_normal(rng, {b, d}, spec.dtype);
      w.scale_(1.0 / std::sqrt(static_cast<double>(d)));
      proj_w_.push_back(make_param(unit_name(s) + ".proj.weight", std::move(w), ParamRole::structure));
      proj_b_.push_back(make_param(unit_name(s) + ".proj.bias", Tensor({b}, spec.dtype), ParamRole::structure));
    }
  }
}

Tensor oracle_blocks(const ToeplitzOracle& oracle, const C4Element& rotation) {
  const auto map = rotation_index_map(3, rotation);
  const std::int64_t plane = oracle.size() * oracle.size();
  Tensor out(oracle.selectors.shape(), oracle.selectors.dtype());
  // sum_k tau[map[k]] P_k = sum_j tau_j P_{map^-1(j)}
  dispatch(out.dtype(), [&]<typename T>() {
    auto src = oracle.selectors.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t k = 0; k < 9; ++k) {
      const std::int64_t j = map[static_cast<std::size_t>(k)];
      std::copy(src.begin() + k * plane, src.begin() + (k + 1) * plane, dst.begin() + j * plane);
    }
  });
  return out;
}

StudentLayer StudentLayer::oracle(const StudentSpec& spec, Padding padding) {
  validate(spec);
  if (spec.approx()) throw ShapeError("oracle weights exist only for the direct (9-block) students");
  StudentLayer layer;
  layer.spec_ = spec;
  const ToeplitzOracle unrolled = toeplitz_unroll(spec.height, spec.width, padding, spec.dtype);
  for (std::int64_t s = 0; s < spec.subunits(); ++s) {
    layer.blocks_.push_back(
        make_param(unit_name(s) + ".blocks", oracle_blocks(unrolled, C4Element(static_cast<int>(s))), ParamRole::structure));
  }
  return layer;
}

Var StudentLayer::expand(Tape& tape, const Var& x, std::int64_t unit) const {
  if (unit < 0 || unit >= subunits()) throw ShapeError("student subunit index out of range");
  if (x.shape().size() != 2 || x.shape()[1] != size()) {
    throw ShapeError("student expects inputs [R," + std::to_string(size()) + "], got " + shape_string(x.shape()));
  }
  return ops::block_matmul(tape.param(block_param(unit)), x);
}

Var StudentLayer::coefficients(Tape& tape, const Var& tau, std::int64_t unit) const {
  if (tau.shape().size() != 2 || tau.shape()[1] != 9) {
    throw ShapeError("student kernel rows must be [P,9], got " + shape_string(tau.shape()));
  }
  if (!spec_.approx()) return tau;
  const Var hidden = ops::relu(ops::linear(tau, tape.param(embed_w_), tape.param(embed_b_)));
  const auto s = static_cast<std::size_t>(unit);
  return ops::linear(hidden, tape.param(proj_w_.at(s)), tape.param(proj_b_.at(s)));
}

namespace {

void check_kernel_batch(const Shape& tau, std::int64_t n, const Shape& expected_tail) {
  const bool ok_tail = tau.size() == expected_tail.size() + 1 &&
                       std::equal(expected_tail.begin(), expected_tail.end(), tau.begin() + 1);
  if (!ok_tail || (tau[0] != 1 && tau[0] != n)) {
    Shape want{n};
    want.insert(want.end(), expected_tail.begin(), expected_tail.end());
    throw ShapeError("student kernels " + shape_string(tau) + " do not match " + shape_string(want) +
                     " (leading axis 1 or batch)");
  }
}

/// y[n,o] = sum_{j,b} coef[t,o,j,b] M_b x[n,j] for rows x [n,J,N] and block
/// coefficients c [P,B] routed by `source`: coef[t,o,j,:] = c[source(t,o,j),:].
/// Applies the blocks first when J <= O, otherwise contracts over j first
/// (cost O*B*N^2 instead of J*B*N^2 per sample).
template <class Source>
Var routed_unit(Tape& tape, const StudentLayer& unit, std::int64_t s, const Var& x, const Var& c, std::int64_t t,
                std::int64_t o, Source source) {
  const std::int64_t n = x.shape()[0], J = x.shape()[1], N = unit.size(), b = unit.blocks();
  std::vector<std::int64_t> index;
  index.reserve(static_cast<std::size_t>(t * o * J * b));
  if (o >= J) {
    for (std::int64_t tt = 0; tt < t; ++tt) {
      for (std::int64_t oo = 0; oo < o; ++oo) {
        for (std::int64_t j = 0; j < J; ++j) {
          const std::int64_t src = source(tt, oo, j) * b;
          for (std::int64_t k = 0; k < b; ++k) index.push_back(src + k);
        }
      }
    }
    const Var z = ops::reshape(unit.expand(tape, ops::reshape(x, {n * J, N}), s), {n, J * b, N});
    return ops::mix(z, ops::gather(c, std::move(index), {t, o, J * b}));
  }
  for (std::int64_t tt = 0; tt < t; ++tt) {
    for (std::int64_t oo = 0; oo < o; ++oo) {
      for (std::int64_t k = 0; k < b; ++k) {
        for (std::int64_t j = 0; j < J; ++j) index.push_back(source(tt, oo, j) * b + k);
      }
    }
  }
  const Var u = ops::mix(x, ops::gather(c, std::move(index), {t, o * b, J}));  // [n, o*b, N]
  std::vector<std::int64_t> wide;
  wide.reserve(static_cast<std::size_t>(b * N * N));
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t k = 0; k < b; ++k) {
      for (std::int64_t jj = 0; jj < N; ++jj) wide.push_back((k * N + i) * N + jj);
    }
  }
  const Var w = ops::gather(tape.param(unit.block_param(s)), std::move(wide), {N, b * N});
  return ops::reshape(ops::linear(ops::reshape(u, {n * o, b * N}), w, std::nullopt), {n, o, N});
}

Var planar_unit(Tape& tape, const StudentLayer& unit, std::int64_t s, const Var& h, const Var& tau) {
  const std::int64_t ci = h.shape()[1];
  const std::int64_t t = tau.shape()[0], co = tau.shape()[1];
  const Var c = unit.coefficients(tape, ops::reshape(tau, {t * co * ci, 9}), s);
  return routed_unit(tape, unit, s, h, c, t, co,
                     [co, ci](std::int64_t tt, std::int64_t oo, std::int64_t j) { return (tt * co + oo) * ci + j; });
}

void check_planar_input(const StudentLayer& unit, const Var& h) {
  if (h.shape().size() != 3 || h.shape()[2] != unit.size()) {
    throw ShapeError("student layer expects [n,C," + std::to_string(unit.size()) + "], got " + shape_string(h.shape()));
  }
}

}  // namespace

Var student_planar_layer(Tape& tape, const StudentLayer& unit, const Var& h, const Var& tau) {
  check_planar_input(unit, h);
  check_kernel_batch(tau.shape(), h.shape()[0], {tau.shape().size() > 1 ? tau.shape()[1] : 0, h.shape()[1], 9});
  return planar_unit(tape, unit, 0, h, tau);
}

Var student_lifting_layer(Tape& tape, const StudentLayer& unit, const Var& h, const Var& tau) {
  check_planar_input(unit, h);
  if (unit.subunits() != 4) throw ShapeError("lifting layers need a four-subunit (mlp2gcnn) student");
  check_kernel_batch(tau.shape(), h.shape()[0], {tau.shape().size() > 1 ? tau.shape()[1] : 0, h.shape()[1], 9});
  std::vector<Var> orientations;
  for (std::int64_t s = 0; s < 4; ++s) orientations.push_back(planar_unit(tape, unit, s, h, tau));
  return ops::stack(orientations, 2);
}

Var student_group_layer(Tape& tape, const StudentLayer& unit, const Var& h, const Var& psi) {
  const Shape& hs = h.shape();
  if (hs.size() != 4 || hs[2] != 4 || hs[3] != unit.size()) {
    throw ShapeError("group student layer expects [n,C,4," + std::to_string(unit.size()) + "], got " + shape_string(hs));
  }
  if (unit.subunits() != 4) throw ShapeError("group layers need a four-subunit (mlp2gcnn) student");
  const std::int64_t n = hs[0], ci = hs[1], N = unit.size();
  check_kernel_batch(psi.shape(), n, {psi.shape().size() > 1 ? psi.shape()[1] : 0, ci, 4, 9});
  const std::int64_t t = psi.shape()[0], co = psi.shape()[1];
  const Var flat = ops::reshape(h, {n, ci * 4, N});
  const Var rows = ops::reshape(psi, {t * co * ci * 4, 9});
  std::vector<Var> orientations;
  for (std::int64_t s = 0; s < 4; ++s) {
    const Var c = unit.coefficients(tape, rows, s);  // rows ordered (t,o,c,h')
    orientations.push_back(routed_unit(tape, unit, s, flat, c, t, co, [co, ci, s](std::int64_t tt, std::int64_t oo, std::int64_t j) {
      const std::int64_t cc = j / 4, hh = j % 4;
      return ((tt * co + oo) * ci + cc) * 4 + (hh - s + 4) % 4;
    }));
  }
  return ops::stack(orientations, 2);
}

Var StudentLayer::forward(Tape& tape, const Var& x, const Var& tau) const {
  if (x.shape().size() != 2) throw ShapeError("student forward expects x [n,N], got " + shape_string(x.shape()));
  if (tau.shape().size() != 2) throw ShapeError("student forward expects tau [n,9], got " + shape_string(tau.shape()));
  const std::int64_t n = x.shape()[0];
  const Var h = ops::reshape(x, {n, 1, x.shape()[1]});
  const Var k = ops::reshape(tau, {tau.shape()[0], 1, 1, tau.shape()[1]});
  if (subunits() == 1) return ops::reshape(student_planar_layer(tape, *this, h, k), {n, size()});
  return ops::reshape(student_lifting_layer(tape, *this, h, k), {n, 4, size()});
}

Var StudentLayer::forward_group(Tape& tape, const Var& f, const Var& psi) const {
  if (f.shape().size() != 3) throw ShapeError("group forward expects f [n,4,N], got " + shape_string(f.shape()));
  if (psi.shape().size() != 3) throw ShapeError("group forward expects psi [n,4,9], got " + shape_string(psi.shape()));
  const std::int64_t n = f.shape()[0];
  const Var h = ops::reshape(f, {n, 1, f.shape()[1], f.shape()[2]});
  const Var k = ops::reshape(psi, {psi.shape()[0], 1, 1, psi.shape()[1], psi.shape()[2]});
  return ops::reshape(student_group_layer(tape, *this, h, k), {n, 4, size()});
}

Tensor StudentLayer::apply(const Tensor& x, const Tensor& tau) const {
  const bool single = x.rank() == 1;
  Tape tape;
  const Var xv = tape.constant(single ? x.reshaped({1, x.numel()}) : x);
  const Var tv = tape.constant(tau.rank() == 1 ? tau.reshaped({1, tau.numel()}) : tau);
  Tensor y = forward(tape, xv, tv).value();
  if (single) {
    Shape s(y.shape().begin() + 1, y.shape().end());
    y = std::move(y).reshaped(s);
  }
  return y;
}

Tensor StudentLayer::apply_group(const Tensor& f, const Tensor& psi) const {
  const bool single = f.rank() == 2;
  Tape tape;
  const Var fv = tape.constant(single ? f.reshaped({1, f.dim(0), f.dim(1)}) : f);
  const Var pv = tape.constant(psi.rank() == 2 ? psi.reshaped({1, psi.dim(0), psi.dim(1)}) : psi);
  Tensor y = forward_group(tape, fv, pv).value();
  if (single) y = std::move(y).reshaped({y.dim(1), y.dim(2)});
  return y;
}

std::vector<ParamPtr> StudentLayer::parameters() const {
  std::vector<ParamPtr> out = blocks_;
  if (embed_w_) {
    out.push_back(embed_w_);
    out.push_back(embed_b_);
    for (std::size_t s = 0; s < proj_w_.size(); ++s) {
      out.push_back(proj_w_[s]);
      out.push_back(proj_b_[s]);
    }
  }
  return out;
}

StudentLayer StudentLayer::clone() const {
  const auto copy = [](const ParamPtr& p) { return p ? std::make_shared<Parameter>(*p) : ParamPtr{}; };
  StudentLayer out;
  out.spec_ = spec_;
  for (const auto& p : blocks_) out.blocks_.push_back(copy(p));
  out.embed_w_ = copy(embed_w_);
  out.embed_b_ = copy(embed_b_);
  for (const auto& p : proj_w_) out.proj_w_.push_back(copy(p));
  for (const auto& p : proj_b_) out.proj_b_.push_back(copy(p));
  return out;
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "freeze") return TrainMode::freeze;
  if (name == "unfreeze") return TrainMode::unfreeze;
  throw Error("unknown training mode '" + name + "'");
}

std::string to_string(TrainMode mode) { return mode == TrainMode::freeze ? "freeze" : "unfreeze"; }

void apply_train_mode(const std::vector<ParamPtr>& params, TrainMode mode) {
  if (mode == TrainMode::freeze) {
    const bool has_kernel =
        std::any_of(params.begin(), params.end(), [](const ParamPtr& p) { return p->role == ParamRole::kernel; });
    if (!has_kernel) throw Error("freeze mode needs kernel parameters, but the model has none");
  }
  for (const auto& p : params) p->trainable = mode == TrainMode::unfreeze || p->role != ParamRole::structure;
}

namespace {

class StudentClassifier final : public Classifier {
 public:
  StudentClassifier(const std::vector<StudentLayer>& units, const StudentClassifierSpec& spec, SeededRng& rng)
      : spec_(spec) {
    if (spec.channels.empty()) throw ShapeError("student classifier needs at least one layer");
    if (units.empty()) throw ShapeError("student classifier needs a cloned unit");
    const StudentLayer& first = units.front();
    lifted_ = first.subunits() == 4;
    height_ = first.spec().height;
    width_ = first.spec().width;
    for (const auto& u : units) {
      if (u.spec().kind != first.spec().kind) throw ShapeError("cloned units of one classifier must share a kind");
      height_ = std::max(height_, u.spec().height);
      width_ = std::max(width_, u.spec().width);
    }
    const DType dtype = first.spec().dtype;
    std::int64_t in = 1, h = height_, w = width_;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      const std::int64_t out = spec.channels[i];
      if (out < 1) throw ShapeError("inconsistent channel chain: channel counts must be positive");
      const auto match = std::find_if(units.begin(), units.end(), [&](const StudentLayer& u) {
        return u.spec().height == h && u.spec().width == w;
      });
      if (match == units.end()) {
        throw ShapeError("layer " + std::to_string(i) + " needs a cloned unit on a " + std::to_string(h) + "x" +
                         std::to_string(w) + " grid");
      }
      const std::string name = "layer" + std::to_string(i);
      units_.push_back(match->clone());
      if (lifted_ && i > 0) {
        taus_.push_back(make_param(name + ".psi", he_normal({out, in, 4, 9}, in * 36, rng, dtype)));
      } else {
        taus_.push_back(make_param(name + ".tau", he_normal({out, in, 9}, in * 9, rng, dtype)));
      }
      biases_.push_back(make_param(name + ".bias", Tensor({out}, dtype)));
      if (pools_after(spec.pool_after, static_cast<std::int64_t>(i))) {
        if (h % 2 != 0 || w % 2 != 0) {
          throw ShapeError("pooling after layer " + std::to_string(i) + " needs an even grid, got " +
                           std::to_string(h) + "x" + std::to_string(w));
        }
        h /= 2;
        w /= 2;
      }
      in = out;
    }
    head_ = ClassifierHead(in, spec.head_hidden, spec.classes, rng, dtype);
  }

  Var forward(Tape& tape, const Var& images) override {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != height_ || s[3] != width_) {
      throw ShapeError("student classifier expects images [n,1," + std::to_string(height_) + "," +
                       std::to_string(width_) + "], got " + shape_string(s));
    }
    const std::int64_t n = s[0];
    Var h = ops::reshape(images, {n, 1, height_ * width_});
    for (std::size_t i = 0; i < units_.size(); ++i) {
      const Shape& ts = taus_[i]->value.shape();
      Shape batched{1};
      batched.insert(batched.end(), ts.begin(), ts.end());
      const Var tau = ops::reshape(tape.param(taus_[i]), batched);
      if (!lifted_) {
        h = student_planar_layer(tape, units_[i], h, tau);
      } else if (i == 0) {
        h = student_lifting_layer(tape, units_[i], h, tau);
      } else {
        h = student_group_layer(tape, units_[i], h, tau);
      }
      h = ops::relu(ops::add_channel_bias(h, tape.param(biases_[i])));
      if (pools_after(spec_.pool_after, static_cast<std::int64_t>(i))) h = pool(h, units_[i].spec());
    }
    if (lifted_) h = ops::reduce_max(h, 2);
    return head_.forward(tape, h);
  }

  std::vector<ParamPtr> parameters() const override {
    std::vector<ParamPtr> out;
    for (std::size_t i = 0; i < units_.size(); ++i) {
      for (auto& p : units_[i].parameters()) out.push_back(p);
      out.push_back(taus_[i]);
      out.push_back(biases_[i]);
    }
    for (auto& p : head_.parameters()) out.push_back(p);
    return out;
  }
  std::string kind() const override { return lifted_ ? "student-gcnn" : "student-cnn"; }
  std::int64_t classes() const override { return spec_.classes; }

 private:
  // Flattened activations [n,C,(4,)HW] -> 2x2 max pool -> [n,C,(4,)HW/4].
  static Var pool(const Var& h, const StudentSpec& grid) {
    Shape grid_shape(h.shape().begin(), h.shape().end() - 1);
    Shape pooled = grid_shape;
    grid_shape.push_back(grid.height);
    grid_shape.push_back(grid.width);
    pooled.push_back(grid.height / 2 * (grid.width / 2));
    return ops::reshape(ops::max_pool(ops::reshape(h, grid_shape), 2), pooled);
  }

  StudentClassifierSpec spec_;
  bool lifted_ = false;
  std::int64_t height_ = 0, width_ = 0;
  std::vector<StudentLayer> units_;
  std::vector<ParamPtr> taus_, biases_;
  ClassifierHead head_;
};

}  // namespace

std::unique_ptr<Classifier> assemble_student_classifier(const StudentLayer& unit, const StudentClassifierSpec& spec,
                                                        SeededRng& rng) {
  if (spec.classes < 2) throw ShapeError("classifier needs at least 2 classes");
  std::vector<StudentLayer> units;
  units.push_back(unit.clone());
  return assemble_student_classifier(units, spec, rng);
}

std::unique_ptr<Classifier> assemble_student_classifier(const std::vector<StudentLayer>& units,
                                                        const StudentClassifierSpec& spec, SeededRng& rng) {
  if (spec.classes < 2) throw ShapeError("classifier needs at least 2 classes");
  return std::make_unique<StudentClassifier>(units, spec, rng);
}

}  // namespace symclone
