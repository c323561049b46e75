#include "symclone/optim.hpp"

#include <cmath>

namespace symclone {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw Error("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerConfig config, std::vector<ParamPtr> params)
    : config_(config), params_(std::move(params)) {
  if (!(config_.learning_rate > 0.0)) throw Error("optimizer learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape(), p->value.dtype());
    v_.emplace_back(p->value.shape(), p->value.dtype());
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void Optimizer::step() {
  for (const auto& p : params_) {
    if (p->trainable && !p->grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + p->name + "'");
  }
  ++t_;
  const double lr = config_.learning_rate;
  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.trainable) continue;
    dispatch(p.value.dtype(), [&]<typename T>() {
      auto w = p.value.data<T>();
      auto g = p.grad.data<T>();
      if (config_.kind == OptimizerKind::sgd) {
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= static_cast<T>(lr * g[j]);
        return;
      }
      auto m = m_[i].data<T>();
      auto v = v_[i].data<T>();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g[j]);
        v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g[j] * g[j]);
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        w[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    });
  }
}

}  // namespace symclone
