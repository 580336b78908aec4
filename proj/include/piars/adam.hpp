#pragma once

#include <cstdint>
#include <vector>

#include "piars/tensor.hpp"

namespace piars::grad {

// Adam with bias correction over a fixed list of parameter tensors.
struct AdamState {
  std::int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> m, v;

  void init(const std::vector<Tensor*>& params) {
    m.clear();
    v.clear();
    for (const Tensor* p : params) {
      m.emplace_back(p->shape);
      v.emplace_back(p->shape);
    }
    step = 0;
  }
};

// Throws std::runtime_error on non-finite gradients; parameters are left
// untouched in that case.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state);

}  // namespace piars::grad
