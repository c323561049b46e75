#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "symclone/config.hpp"

namespace symclone {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNotConverged = 3;

/// Runs `body` and maps exceptions to exit codes: ConfigError -> 2, any
/// other error -> 1. Messages go to `err`.
int guarded(std::ostream& err, const std::function<int()>& body);

/// Clones a student against the configured teacher and writes
/// student.ckpt, loss.csv, clone_report.json. Returns 0 on convergence, 3
/// otherwise.
int run_clone(const RunConfig& config, std::ostream& log);

/// equivariance.csv with teacher, student (when task.checkpoint is set) and
/// random_student rows.
int run_eval_equiv(const RunConfig& config, std::ostream& log);

struct BenchOptions {
  bool all = false;
  /// Where `--all` looks for (and stores) the cloned checkpoints.
  std::filesystem::path checkpoint_dir;
};

/// One task/model cell from the config, or the whole grid with `all`.
int run_bench(const RunConfig& config, const BenchOptions& options, std::ostream& log);

/// learned.pgm, oracle.pgm, side_by_side.pgm and toeplitz.csv for a
/// 9-block direct checkpoint.
int run_inspect_toeplitz(const RunConfig& config, std::ostream& log);

/// Feature-map grid of teacher, cloned student and random student for the
/// first `samples` dataset images and their transformed copies.
int run_export_maps(const RunConfig& config, std::int64_t samples, std::ostream& log);

/// Downloads and verifies the four canonical MNIST archives.
int run_fetch_data(const std::filesystem::path& directory, const std::string& mirror, std::ostream& log);

/// Rows of the `--all` grid: (task, model, block count or 0).
struct BenchCell {
  std::string task;
  std::string model;
  std::int64_t blocks = 0;

  std::string label() const;
};
std::vector<BenchCell> bench_grid();

}  // namespace symclone
