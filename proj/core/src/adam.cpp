#include "posenc/adam.hpp"

#include <cmath>
#include <string>

#include "posenc/errors.hpp"

namespace posenc {

void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& options) {
  if (!(options.lr > 0.0)) {
    throw ConfigError("adam_step: learning rate must be positive, got " + std::to_string(options.lr));
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw Error("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = params[p];
    auto values = param.mutable_values();
    const auto grad = param.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g;
      v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g * g;
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      values[k] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
    param.zero_grad();
  }
}

}  // namespace posenc
