#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Gives a backward closure access to its inputs and their gradient buffers.
class GradSink {
 public:
  GradSink(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}

  std::size_t num_inputs() const;
  const Tensor& input(std::size_t i) const;
  const Tensor& output() const;
  /// Gradient accumulator of input i, or nullptr when that input does not
  /// need a gradient.
  Tensor* grad(std::size_t i);

 private:
  Tape& tape_;
  std::size_t node_;
};

using BackwardFn = std::function<void(const Tensor& out_grad, GradSink& sink)>;
using GradientMap = std::map<std::string, Tensor>;

/// Ordered record of primitive applications. Parameters are registered by
/// name; backward() returns one gradient per registered name and consumes
/// the tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(const std::string& name, Tensor value);
  /// Appends a primitive application. `op` must outlive the tape (use a literal).
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const std::map<std::string, std::size_t>& parameters() const { return params_; }

  friend GradientMap backward(Tape& tape, Var loss);
  friend class GradSink;

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Tensor& grad_buffer(std::size_t id);
  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
  bool consumed_ = false;
};

/// Reverse-mode sweep from a scalar loss. Throws ContractViolation for a
/// non-scalar loss or an already-consumed tape, NumericError (naming the
/// primitive) when a gradient turns non-finite.
GradientMap backward(Tape& tape, Var loss);

}  // namespace mtl
