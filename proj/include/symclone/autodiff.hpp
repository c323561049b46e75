#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "symclone/tensor.hpp"

namespace symclone {

/// What a parameter encodes inside a model. Freeze mode trains kernel and
/// head parameters and holds structure parameters fixed.
enum class ParamRole { kernel, structure, head };

struct Parameter {
  Parameter(std::string name, Tensor value, ParamRole role = ParamRole::kernel, bool trainable = true);

  std::string name;
  Tensor value;
  Tensor grad;  // same shape and dtype as value
  ParamRole role;
  bool trainable;

  void zero_grad() { grad.fill(0.0); }
};

using ParamPtr = std::shared_ptr<Parameter>;

ParamPtr make_param(std::string name, Tensor value, ParamRole role = ParamRole::kernel);

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  DType dtype() const { return value().dtype(); }
  std::int64_t numel() const { return value().numel(); }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;

/// Records primitive operations in execution order. backward() replays the
/// gradient rules in reverse order. The tape belongs to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradients (data, labels, sampled kernels).
  Var constant(Tensor value);
  /// Leaf bound to a Parameter. Gradients accumulate into param->grad when
  /// the parameter is trainable; frozen parameters act as constants.
  Var param(const ParamPtr& param);
  /// Appends an operation. `backward` is dropped when no input needs gradients.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Propagates d(loss)/d(.) to every reachable trainable Parameter,
  /// accumulating into existing gradients.
  void backward(const Var& loss);

  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    ParamPtr param;
  };

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  void check_owner(const Var& v) const;

  std::deque<Node> nodes_;
};

/// View of one node during gradient replay.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& grad_output() const { return tape_.node(id_).grad; }
  const Tensor& output() const { return tape_.node(id_).value; }
  const Tensor& input(std::size_t i) const { return tape_.node(input_id(i)).value; }
  bool needs_grad(std::size_t i) const { return tape_.node(input_id(i)).requires_grad; }
  /// Gradient accumulator of input i, zero-allocated on first use.
  Tensor& input_grad(std::size_t i);

 private:
  std::size_t input_id(std::size_t i) const { return tape_.node(id_).inputs.at(i); }

  Tape& tape_;
  std::size_t id_;
};

}  // namespace symclone
