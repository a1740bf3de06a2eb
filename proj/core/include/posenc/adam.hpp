#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "posenc/tensor.hpp"

namespace posenc {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moment buffers, one pair per parameter, plus the step
// count used for bias correction.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update over `params`, then zeroes their adjoints.
// Parameters without an adjoint are treated as having zero gradient.
// Throws ConfigError when lr <= 0.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& options);

}  // namespace posenc
