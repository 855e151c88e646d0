#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "mtl/params.hpp"

namespace mtl {

struct AdamaxHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First moment m, infinity-norm accumulator u and update count t of one
/// parameter tensor.
struct AdamaxState {
  Tensor m;
  Tensor u;
  std::size_t t = 0;
};

/// One Adamax step with coupled weight decay:
///   g = grad + weight_decay * param
///   m = beta1 m + (1 - beta1) g
///   u = max(beta2 u, |g|)
///   param -= lr * m / ((1 - beta1^t) (u + eps))
/// Throws NumericError on a non-finite gradient, ContractViolation on a
/// shape mismatch.
void adamax_update(Tensor& param, const Tensor& grad, AdamaxState& state, double lr, double weight_decay,
                   const AdamaxHyper& hyper = {});

/// Adamax over a named parameter set. Only parameters present in the
/// gradient map are touched; each keeps its own step counter.
class Adamax {
 public:
  explicit Adamax(AdamaxHyper hyper = {}) : hyper_(hyper) {}

  /// Weight decay is skipped for biases and normalization parameters.
  void step(ParamStore& params, const GradientMap& grads, double lr, double weight_decay);

  const std::map<std::string, AdamaxState>& states() const { return states_; }
  /// Drops state of every parameter under `prefix` (used when a head is replaced).
  void forget(std::string_view prefix);

 private:
  AdamaxHyper hyper_;
  std::map<std::string, AdamaxState> states_;
};

/// Linear warm-up from 0 to `peak` over the first round(warmup_fraction *
/// total_steps) steps, then linear decay to 0 at total_steps. A warm-up that
/// rounds to zero steps starts directly at the peak.
double lr_at(std::size_t step, std::size_t total_steps, double warmup_fraction, double peak);

double global_norm(const GradientMap& grads);

/// Scales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_gradients(GradientMap& grads, double max_norm);

}  // namespace mtl
