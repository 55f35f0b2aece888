#pragma once

#include <vector>

#include "ssmlab/tensor.hpp"

namespace ssmlab {

/// First/second-moment accumulators, one pair per parameter tensor.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  Index step = 0;

  static AdamState like(const std::vector<Tensor*>& params);
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update, in place. Throws "diverged" on any
/// non-finite gradient.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& config);

}  // namespace ssmlab
