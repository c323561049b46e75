#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "symclone/agnostic.hpp"
#include "symclone/dataset.hpp"
#include "symclone/metrics.hpp"
#include "symclone/model.hpp"
#include "symclone/optim.hpp"

namespace symclone {

/// Each sample shifted by (dy,dx) uniform in [-max_shift, max_shift]^2 with
/// zero fill; the shift is stored in meta.
Dataset make_translated_dataset(const Dataset& dataset, SeededRng& rng, int max_shift = 7);
/// Each sample rotated by k uniform in {0,1,2,3} clockwise quarter turns.
Dataset make_rotated_dataset(const Dataset& dataset, SeededRng& rng);

/// y if shifted left (dx < 0), else y + 10.
int relabel_translation(int y, int dx);
/// y if k in {0,1}, else y + 10.
int relabel_rotation(int y, int k);

enum class TaskId { t2_sym, t2_break, c4_sym, c4_break };

TaskId parse_task_id(const std::string& name);
std::string to_string(TaskId id);

struct BenchmarkTask {
  TaskId id = TaskId::t2_sym;
  GroupKind group = GroupKind::t2;
  bool breaking = false;
  std::int64_t classes = 10;
  Dataset train;
  Dataset test;
};

/// Symmetric tasks train on the untransformed set and test on transformed
/// samples; symmetry-breaking tasks train and test on transformed, relabelled
/// samples. Transform draws come from seeded streams of `seed`.
BenchmarkTask make_task(TaskId id, const Dataset& train, const Dataset& test, std::uint64_t seed, int max_shift = 4);

struct KlRegConfig {
  double beta = 1e-3;
  double var_floor = 1e-8;
};

/// Gaussian moment model of every parameter tensor, compared with a snapshot
/// taken at construction:
/// KL = sum_l log(s0/st) + (st^2 + (mt - m0)^2) / (2 s0^2) - 1/2.
/// Tensors whose snapshot variance is at most var_floor (constant-initialised
/// biases) are left out; the current variance is clamped below at var_floor.
class KlPenalty {
 public:
  KlPenalty(std::vector<ParamPtr> params, KlRegConfig config);

  Var penalty(Tape& tape) const;
  double value() const;
  const std::vector<ParamPtr>& params() const noexcept { return params_; }

 private:
  std::vector<ParamPtr> params_;
  std::vector<double> mean0_, var0_;
  KlRegConfig config_;
};

struct TrainConfig {
  TrainMode mode = TrainMode::unfreeze;
  std::int64_t epochs = 5;
  std::int64_t batch = 128;
  OptimizerConfig optimizer;
  /// KL term of the unfreeze update; beta = 0 disables it.
  KlRegConfig kl{0.0, 1e-8};
  /// Learning-rate multiplier for structure parameters (cloned blocks,
  /// embedders, MLP hidden layers) when they train.
  double structure_lr_scale = 1.0;
  std::int64_t eval_batch = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AccuracyRow {
  std::int64_t epoch = 0;
  std::string split;
  double accuracy = 0.0;
  double loss = 0.0;
  double kl_penalty = 0.0;
};

struct TrainReport {
  std::vector<AccuracyRow> rows;
  double final_test_accuracy = 0.0;
  double final_train_accuracy = 0.0;
  double seconds = 0.0;
};

/// Mean cross-entropy and accuracy of `model` on `data`.
std::pair<double, double> evaluate(Classifier& model, const Dataset& data, std::int64_t batch);

/// Trains with Adam/SGD on cross-entropy. In unfreeze mode with beta > 0 the
/// update is theta <- theta - step(grad L) - beta * grad KL.
TrainReport train_on_task(Classifier& model, const BenchmarkTask& task, const TrainConfig& config);

/// epoch,split,accuracy,loss,kl_penalty
void write_accuracy_csv(const TrainReport& report, const std::filesystem::path& path);

}  // namespace symclone
