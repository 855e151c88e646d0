#include "mtl/tape.hpp"

#include "mtl/errors.hpp"

namespace mtl {

const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractViolation("var: not bound to a tape");
  return tape->value(*this);
}

std::size_t GradSink::num_inputs() const { return tape_.nodes_[node_].inputs.size(); }

const Tensor& GradSink::input(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].value;
}

const Tensor& GradSink::output() const { return tape_.nodes_[node_].value; }

Tensor* GradSink::grad(std::size_t i) {
  const std::size_t id = tape_.nodes_[node_].inputs.at(i);
  if (!tape_.nodes_[id].requires_grad) return nullptr;
  return &tape_.grad_buffer(id);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const std::string& name, Tensor value) {
  if (params_.count(name)) throw ContractViolation("tape: parameter '" + name + "' registered twice");
  if (!value.all_finite()) throw NumericError("parameter '" + name + "': non-finite value");
  Node node;
  node.op = "parameter";
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  params_.emplace(name, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw ContractViolation(std::string(op) + ": tape already consumed by backward");
  if (!value.all_finite()) throw NumericError(std::string("primitive '") + op + "' produced non-finite values");
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    check_owner(v);
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id].requires_grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw ContractViolation("tape: variable belongs to another tape");
}

GradientMap backward(Tape& tape, Var loss) {
  tape.check_owner(loss);
  if (tape.consumed_) throw ContractViolation("backward: tape already consumed");
  const Tensor& lv = tape.nodes_[loss.id].value;
  if (lv.size() != 1) throw ContractViolation("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
  tape.consumed_ = true;

  if (tape.nodes_[loss.id].requires_grad) {
    tape.grad_buffer(loss.id).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Tape::Node& node = tape.nodes_[i];
      if (!node.has_grad || !node.backward) continue;
      GradSink sink(tape, i);
      node.backward(node.grad, sink);
      for (std::size_t in : node.inputs) {
        const Tape::Node& input = tape.nodes_[in];
        if (input.has_grad && !input.grad.all_finite()) {
          throw NumericError(std::string("backward through '") + node.op + "' produced non-finite gradients");
        }
      }
      // Activations' gradients are no longer needed once propagated.
      if (!node.inputs.empty()) node.grad = Tensor();
    }
  }

  GradientMap grads;
  for (const auto& [name, id] : tape.params_) {
    Tape::Node& node = tape.nodes_[id];
    grads.emplace(name, node.has_grad ? std::move(node.grad) : Tensor(node.value.shape()));
  }
  return grads;
}

}  // namespace mtl
