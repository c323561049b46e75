#include "symclone/autodiff.hpp"

namespace symclone {

Parameter::Parameter(std::string name_, Tensor value_, ParamRole role_, bool trainable_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(value.shape(), value.dtype()),
      role(role_),
      trainable(trainable_) {}

ParamPtr make_param(std::string name, Tensor value, ParamRole role) {
  return std::make_shared<Parameter>(std::move(name), std::move(value), role);
}

const Tensor& Var::value() const { return tape().node(id_).value; }

Tape& Var::tape() const {
  if (tape_ == nullptr) throw Error("use of an unbound Var");
  return *tape_;
}

bool Var::requires_grad() const { return tape().node(id_).requires_grad; }

void Tape::check_owner(const Var& v) const {
  if (&v.tape() != this) throw Error("Var recorded on a different tape");
  if (v.id() >= nodes_.size()) throw Error("Var refers to a cleared tape entry");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamPtr& p) {
  Node n;
  n.value = p->value;
  n.requires_grad = p->trainable;
  n.param = p;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& v : inputs) {
    check_owner(v);
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw Error("backward on an empty tape");
  check_owner(loss);
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));

  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Node& root = nodes_[loss.id()];
  root.grad = Tensor::full(root.value.shape(), 1.0, root.value.dtype());
  root.has_grad = true;

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.param) {
      n.param->grad.add_(n.grad);
    } else if (n.backward) {
      BackwardContext ctx(*this, id);
      n.backward(ctx);
    }
    n.grad = Tensor();
    n.has_grad = false;
  }
}

void Tape::clear() { nodes_.clear(); }

Tensor& BackwardContext::input_grad(std::size_t i) {
  auto& n = tape_.node(input_id(i));
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), n.value.dtype());
    n.has_grad = true;
  }
  return n.grad;
}

}  // namespace symclone
