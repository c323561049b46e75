#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "symclone/autodiff.hpp"

namespace symclone {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

/// SGD or Adam over a fixed parameter list. step() reads gradients and leaves
/// them in place; call zero_grad() before the next backward pass.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<ParamPtr> params);

  void step();
  void zero_grad();

  std::int64_t steps() const noexcept { return t_; }
  const OptimizerConfig& config() const noexcept { return config_; }
  const std::vector<ParamPtr>& params() const noexcept { return params_; }

 private:
  OptimizerConfig config_;
  std::vector<ParamPtr> params_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace symclone
