#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "symclone/agnostic.hpp"
#include "symclone/metrics.hpp"
#include "symclone/optim.hpp"

namespace symclone {

enum class TeacherKind { conv, lifting, groupconv };

TeacherKind parse_teacher_kind(const std::string& name);
std::string to_string(TeacherKind kind);

/// Single-channel equivariant teacher with kernel tau drawn per sample.
///   conv:      x [N],   tau [9]   -> y [N]
///   lifting:   x [N],   tau [9]   -> y [4,N]
///   groupconv: x [4,N], tau [4,9] -> y [4,N]
struct TeacherSpec {
  TeacherKind kind = TeacherKind::conv;
  std::int64_t height = 14;
  std::int64_t width = 14;
  Padding padding = Padding::zero_fill;
  DType dtype = DType::f32;

  std::int64_t size() const noexcept { return height * width; }
  Shape input_shape() const;
  Shape kernel_shape() const;
  Shape output_shape() const;
  /// x [n, input...], tau [n, kernel...] -> y [n, output...]
  Tensor forward(const Tensor& x, const Tensor& tau) const;
  /// Group whose symmetry the teacher carries (T2 for conv, C4 otherwise).
  GroupKind group() const noexcept { return kind == TeacherKind::conv ? GroupKind::t2 : GroupKind::c4; }
};

/// Throws ShapeError unless the student can imitate the teacher.
void check_compatible(const StudentLayer& student, const TeacherSpec& teacher);

struct CloneBatch {
  Tensor x;
  Tensor tau;
  Tensor y;
};

/// x and tau i.i.d. standard normal; y is the teacher's output per sample.
CloneBatch sample_clone_batch(SeededRng& rng, const TeacherSpec& teacher, std::int64_t batch);

/// Student prediction for a batch, recorded on `tape`.
Var student_predict(Tape& tape, const StudentLayer& student, const TeacherSpec& teacher, const Var& x, const Var& tau);

/// One forward / MSE / backward / optimizer step. Returns the pre-step loss.
/// Throws NumericError on a non-finite loss.
double clone_step(const StudentLayer& student, const TeacherSpec& teacher, const CloneBatch& batch,
                  Optimizer& optimizer);

/// sum (student - y)^2 / sum y^2 over the batch.
double relative_mse(const StudentLayer& student, const TeacherSpec& teacher, const CloneBatch& batch);

struct CloneConfig {
  std::int64_t batch = 64;
  OptimizerConfig optimizer;
  std::int64_t max_steps = 50000;
  std::int64_t window = 10;
  double eps_rel = 0.01;
  std::int64_t eval_interval = 100;
  std::int64_t eval_batch = 256;
  /// Samples for the equivariance column at each evaluation.
  std::int64_t eval_equiv_samples = 16;
  /// Samples for the initial/final equivariance reports.
  std::int64_t equiv_samples = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CloneRow {
  std::int64_t step = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double rel_mse = std::numeric_limits<double>::quiet_NaN();
  double equiv_error = std::numeric_limits<double>::quiet_NaN();
};

struct CloneReport {
  std::vector<CloneRow> curve;
  bool converged = false;
  std::int64_t steps = 0;
  double final_rel_mse = 0.0;
  double seconds = 0.0;
  EquivarianceReport initial_equivariance;
  EquivarianceReport final_equivariance;
};

/// Equivariance of a student (or teacher when `student` is null) under the
/// teacher's group, with a fresh tau per sample and circular group actions.
EquivarianceReport student_equivariance(const StudentLayer* student, const TeacherSpec& teacher, GroupKind group,
                                        std::int64_t samples, SeededRng& rng);

/// Runs clone_step on fresh batches until the mean relative validation MSE
/// over the last `window` evaluations drops below eps_rel or max_steps is
/// reached. Evaluations happen every eval_interval steps, starting at step 0.
CloneReport clone_until_converged(const StudentLayer& student, const TeacherSpec& teacher, const CloneConfig& config);

/// step,loss,rel_mse,equiv_error with empty cells where a value was not measured.
void write_loss_csv(const CloneReport& report, const std::filesystem::path& path);

}  // namespace symclone
