#include "ssmlab/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmlab {

AdamState AdamState::like(const std::vector<Tensor*>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const Tensor* p : params) {
    state.m.emplace_back(p->shape());
    state.v.emplace_back(p->shape());
  }
  return state;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: params/grads/state size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step");
    if (!grads[i].all_finite()) throw std::runtime_error("diverged");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    const auto& g = grads[i].array();
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.square();
    params[i]->array() -= config.lr * (m / bc1) / ((v / bc2).sqrt() + config.epsilon);
  }
}

}  // namespace ssmlab
