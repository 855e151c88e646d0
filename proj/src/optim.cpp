#include "mtl/optim.hpp"

#include <cmath>

#include "mtl/errors.hpp"

namespace mtl {

void adamax_update(Tensor& param, const Tensor& grad, AdamaxState& state, double lr, double weight_decay,
                   const AdamaxHyper& hyper) {
  if (param.shape() != grad.shape())
    throw ContractViolation("adamax: parameter " + shape_string(param.shape()) + " vs gradient " +
                            shape_string(grad.shape()));
  if (!grad.all_finite()) throw NumericError("adamax: non-finite gradient");
  if (state.m.shape() != param.shape() || state.m.size() != param.size()) {
    state.m = Tensor(param.shape());
    state.u = Tensor(param.shape());
    state.t = 0;
  }
  ++state.t;
  const double correction = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double step = lr / correction;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + weight_decay * param[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.u[i] = std::max(hyper.beta2 * state.u[i], std::fabs(g));
    param[i] -= step * state.m[i] / (state.u[i] + hyper.eps);
  }
}

void Adamax::step(ParamStore& params, const GradientMap& grads, double lr, double weight_decay) {
  for (const auto& [name, grad] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractViolation("adamax: gradient for unknown parameter '" + name + "'");
    adamax_update(it->second, grad, states_[name], lr, decays(name) ? weight_decay : 0.0, hyper_);
  }
}

void Adamax::forget(std::string_view prefix) {
  for (auto it = states_.begin(); it != states_.end();) {
    if (it->first.compare(0, prefix.size(), prefix) == 0)
      it = states_.erase(it);
    else
      ++it;
  }
}

double lr_at(std::size_t step, std::size_t total_steps, double warmup_fraction, double peak) {
  if (total_steps == 0 || step > total_steps)
    throw ContractViolation("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                            "]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw ContractViolation("lr_at: warmup fraction must be in [0, 1)");
  const auto warmup = static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
  if (warmup > 0 && step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

double global_norm(const GradientMap& grads) {
  double total = 0.0;
  for (const auto& [name, g] : grads) total += g.squared_norm();
  return std::sqrt(total);
}

double clip_gradients(GradientMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads) g.scale_(factor);
  }
  return norm;
}

}  // namespace mtl
