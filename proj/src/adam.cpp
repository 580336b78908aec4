#include "piars/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace piars::grad {

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state) {
  require(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  require(state.m.size() == params.size(), "adam_step: state not initialized for these parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->same_shape(grads[i]), "adam_step: gradient shape mismatch");
    if (!all_finite(grads[i]))
      throw std::runtime_error("adam_step: non-finite gradient, update rejected");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& gt = grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m.v[j] = state.beta1 * m.v[j] + (1.0 - state.beta1) * gt.v[j];
      v.v[j] = state.beta2 * v.v[j] + (1.0 - state.beta2) * gt.v[j] * gt.v[j];
      const double mhat = m.v[j] / bc1;
      const double vhat = v.v[j] / bc2;
      p.v[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace piars::grad
