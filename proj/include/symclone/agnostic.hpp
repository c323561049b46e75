#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "symclone/autodiff.hpp"
#include "symclone/equivariant.hpp"
#include "symclone/model.hpp"
#include "symclone/rng.hpp"
#include "symclone/toeplitz.hpp"

namespace symclone {

enum class StudentKind { blockmlp9, blockmlp_approx, mlp2gcnn, mlp2gcnn_approx };

StudentKind parse_student_kind(const std::string& name);
std::string to_string(StudentKind kind);

struct StudentSpec {
  StudentKind kind = StudentKind::blockmlp9;
  std::int64_t height = 14;
  std::int64_t width = 14;
  /// Block count B; must be 9 for the direct kinds, 7..10 for the approx kinds.
  std::int64_t blocks = 9;
  std::int64_t embed_dim = 32;
  DType dtype = DType::f32;

  std::int64_t size() const noexcept { return height * width; }
  std::int64_t subunits() const noexcept;
  bool approx() const noexcept;
};

/// Group-agnostic student layer. Each subunit s holds B unconstrained N x N
/// blocks; its output is y = sum_b c_b M_b x with c = tau (direct) or
/// c = Project_s(ReLU(Embed(tau))) (approx). blockmlp kinds have one
/// subunit; mlp2gcnn kinds have four, one per C4 orientation, all fed the
/// same kernel.
class StudentLayer {
 public:
  StudentLayer(const StudentSpec& spec, SeededRng& rng);

  /// Student whose blocks equal the unrolled convolution selectors, so the
  /// forward pass reproduces the teacher exactly. Direct kinds only.
  static StudentLayer oracle(const StudentSpec& spec, Padding padding);

  const StudentSpec& spec() const noexcept { return spec_; }
  std::int64_t size() const noexcept { return spec_.size(); }
  std::int64_t blocks() const noexcept { return spec_.blocks; }
  std::int64_t subunits() const noexcept { return spec_.subunits(); }

  /// x [R,N] -> [R,B,N] with out[r,b] = M_b(unit) x[r].
  Var expand(Tape& tape, const Var& x, std::int64_t unit) const;
  /// Kernel rows tau [P,9] -> block coefficients [P,B] for `unit`.
  Var coefficients(Tape& tape, const Var& tau, std::int64_t unit) const;

  /// blockmlp: x [n,N], tau [n or 1, 9] -> [n,N].
  /// mlp2gcnn: x [n,N], tau [n or 1, 9] -> [n,4,N] (lifting mode).
  Var forward(Tape& tape, const Var& x, const Var& tau) const;
  /// mlp2gcnn group-convolution mode: f [n,4,N], psi [n or 1,4,9] -> [n,4,N],
  /// out(s) = sum_h unit_s(f(h), psi((h-s) mod 4)).
  Var forward_group(Tape& tape, const Var& f, const Var& psi) const;

  /// Untaped convenience forms; a missing batch axis is added and removed.
  Tensor apply(const Tensor& x, const Tensor& tau) const;
  Tensor apply_group(const Tensor& f, const Tensor& psi) const;

  const ParamPtr& block_param(std::int64_t unit) const { return blocks_.at(static_cast<std::size_t>(unit)); }
  std::vector<ParamPtr> parameters() const;
  /// Independent copy with freshly allocated parameters.
  StudentLayer clone() const;

 private:
  StudentLayer() = default;

  StudentSpec spec_;
  std::vector<ParamPtr> blocks_;      // per subunit [B,N,N]
  ParamPtr embed_w_, embed_b_;        // [d,9], [d]
  std::vector<ParamPtr> proj_w_, proj_b_;  // per subunit [B,d], [B]
};

/// Row-major flat tau index of the rotated kernel: (R^s tau)[k] = tau[map_s[k]].
Tensor oracle_blocks(const ToeplitzOracle& oracle, const C4Element& rotation);

/// Classifier layers built from cloned student units.
///   planar: h [n,Ci,N], tau [T,Co,Ci,9] -> [n,Co,N]
///   lifting: h [n,Ci,N], tau [T,Co,Ci,9] -> [n,Co,4,N]
///   group:   h [n,Ci,4,N], psi [T,Co,Ci,4,9] -> [n,Co,4,N]
/// with T = 1 (shared kernel) or n (per-sample kernels).
Var student_planar_layer(Tape& tape, const StudentLayer& unit, const Var& h, const Var& tau);
Var student_lifting_layer(Tape& tape, const StudentLayer& unit, const Var& h, const Var& tau);
Var student_group_layer(Tape& tape, const StudentLayer& unit, const Var& h, const Var& psi);

enum class TrainMode { freeze, unfreeze };

TrainMode parse_train_mode(const std::string& name);
std::string to_string(TrainMode mode);

/// Layout of a classifier assembled from a cloned unit.
struct StudentClassifierSpec {
  std::vector<std::int64_t> channels{4, 4};
  std::int64_t head_hidden = 0;
  std::int64_t classes = 10;
  /// Layer indices followed by 2x2 max pooling.
  std::vector<std::int64_t> pool_after;
};

/// Stacks deep copies of a cloned unit (one per layer, blocks shared across
/// the channels of a layer), with trainable kernels tau, per-channel biases,
/// ReLU between layers, pooling and a linear head. blockmlp units give a
/// CNN-like stack with spatial average pooling; mlp2gcnn units give a
/// lifting layer followed by group layers, max pooling over orientations,
/// then spatial average pooling.
std::unique_ptr<Classifier> assemble_student_classifier(const StudentLayer& unit, const StudentClassifierSpec& spec,
                                                        SeededRng& rng);

/// Pooled stacks: `units` holds one cloned unit per grid size the stack
/// visits (all of one kind); each layer takes the unit matching its input
/// grid.
std::unique_ptr<Classifier> assemble_student_classifier(const std::vector<StudentLayer>& units,
                                                        const StudentClassifierSpec& spec, SeededRng& rng);

/// Trainability per mode: freeze trains kernel and head parameters only;
/// unfreeze trains everything. Throws if freeze finds no kernel parameters.
void apply_train_mode(const std::vector<ParamPtr>& params, TrainMode mode);

}  // namespace symclone
