#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dri/tensor.hpp"

namespace dri {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

// One bias-corrected Adam update. The state is sized lazily on the first call
// and must keep the same parameter layout afterwards.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               double lr, const AdamConfig& cfg = {});

}  // namespace dri
