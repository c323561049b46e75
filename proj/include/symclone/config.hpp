#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "symclone/agnostic.hpp"
#include "symclone/cloning.hpp"
#include "symclone/downstream.hpp"

namespace symclone {

/// Every setting of one CLI run. JSON documents are merged over the
/// defaults; unknown sections or keys raise ConfigError naming the key.
struct RunConfig {
  struct Teacher {
    std::string kind = "conv";
    std::string padding = "zero_fill";
  } teacher;
  struct Student {
    std::string kind = "blockmlp9";
    std::int64_t blocks = 9;
    std::int64_t embed_dim = 32;
    std::int64_t height = 14;
    std::int64_t width = 14;
  } student;
  struct Clone {
    std::int64_t batch = 64;
    std::string optimizer = "adam";
    double lr = 1e-3;
    std::int64_t max_steps = 50000;
    std::int64_t window = 10;
    double eps_rel = 0.01;
    std::int64_t eval_interval = 100;
    std::int64_t eval_batch = 256;
    std::int64_t eval_equiv_samples = 16;
    std::int64_t equiv_samples = 200;
  } clone;
  struct Task {
    std::string name = "t2-sym";
    std::string model = "cnn";
    /// Cloned checkpoints, one per grid size of a pooled stack. A single
    /// string is accepted in JSON.
    std::vector<std::string> checkpoint;
    std::string images;
    std::string labels;
    std::vector<double> split{0.8, 0.2};
    std::int64_t max_shift = 4;
    std::int64_t downsample = 2;
    std::int64_t train_limit = 0;
  } task;
  struct Train {
    std::int64_t epochs = 5;
    std::int64_t batch = 128;
    std::string optimizer = "adam";
    double lr = 3e-3;
    double beta = 1e-3;
    double var_floor = 1e-8;
    double structure_lr_scale = 1.0;
    std::vector<std::int64_t> channels{16, 16, 16};
    std::vector<std::int64_t> pool_after{};
    std::vector<std::int64_t> gcnn_channels{8, 8, 8};
    std::vector<std::int64_t> gcnn_pool_after{0};
    std::int64_t head_hidden = 64;
    std::vector<std::int64_t> mlp_hidden{256, 256};
    std::int64_t eval_batch = 500;
  } train;
  struct Seeds {
    std::uint64_t clone = 0;
    std::uint64_t data = 0;
    std::uint64_t train = 0;
  } seeds;
  struct Output {
    std::string dir = "runs/default";
  } output;

  /// Merges `doc` over the current values. Throws ConfigError on unknown
  /// keys, wrong types or invalid values.
  void merge(const nlohmann::json& doc);
  /// Checks enumerations and ranges; throws ConfigError naming the key.
  void validate() const;
  nlohmann::json to_json() const;

  StudentSpec student_spec() const;
  TeacherSpec teacher_spec() const;
  CloneConfig clone_config() const;
  TrainConfig train_config(TrainMode mode, bool with_kl) const;
};

/// Defaults, then the file at `path` (if non-empty).
RunConfig load_run_config(const std::filesystem::path& path);

/// Repository data directory baked in at build time.
std::filesystem::path default_data_dir();

}  // namespace symclone
