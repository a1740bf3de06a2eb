#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace posenc::testing {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheck check_gradient(const std::function<Tensor()>& loss, Tensor param, double h, std::size_t max_entries) {
  param.zero_grad();
  backward(loss());
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
  param.zero_grad();

  GradCheck out;
  const std::size_t n = param.numel();
  const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_entries));
  auto values = param.mutable_values();
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < n; i += stride) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss().item();
    values[i] = saved - h;
    const double down = loss().item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double rel = relative_error(analytic[i], numeric);
    if (rel > out.max_rel) {
      out.max_rel = rel;
      out.worst_analytic = analytic[i];
      out.worst_numeric = numeric;
    }
    ++out.checked;
  }
  return out;
}

std::vector<double> random_values(std::size_t n, Rng& rng, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

std::vector<double> naive_attention(std::span<const double> q, std::span<const double> k,
                                    std::span<const double> v, std::span<const double> keep, std::size_t B,
                                    std::size_t H, std::size_t L, std::size_t D,
                                    std::span<const double> rel_keys, std::span<const double> rel_values,
                                    int clip) {
  std::vector<double> out(B * H * L * D, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  auto at = [&](std::size_t b, std::size_t h, std::size_t i) { return ((b * H + h) * L + i) * D; };
  auto rel_row = [&](std::size_t i, std::size_t j) {
    const long off = std::clamp(static_cast<long>(j) - static_cast<long>(i), -static_cast<long>(clip),
                                static_cast<long>(clip));
    return static_cast<std::size_t>(off + clip) * D;
  };
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> logits(L, -std::numeric_limits<double>::infinity());
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          if (keep[(b * L + i) * L + j] == 0.0) continue;
          double s = 0.0;
          for (std::size_t d = 0; d < D; ++d) {
            double key = k[at(b, h, j) + d];
            if (!rel_keys.empty()) key += rel_keys[rel_row(i, j) + d];
            s += q[at(b, h, i) + d] * key;
          }
          logits[j] = s * scale;
          best = std::max(best, logits[j]);
        }
        if (!std::isfinite(best)) continue;  // nothing to attend to
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          if (std::isfinite(logits[j])) z += std::exp(logits[j] - best);
        }
        for (std::size_t j = 0; j < L; ++j) {
          if (!std::isfinite(logits[j])) continue;
          const double a = std::exp(logits[j] - best) / z;
          for (std::size_t d = 0; d < D; ++d) {
            double val = v[at(b, h, j) + d];
            if (!rel_values.empty()) val += rel_values[rel_row(i, j) + d];
            out[at(b, h, i) + d] += a * val;
          }
        }
      }
    }
  }
  return out;
}

std::vector<double> naive_rope(std::span<const double> x, double m, double base) {
  const std::size_t d = x.size();
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double theta = m / std::pow(base, 2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    out[2 * i] = x[2 * i] * c - x[2 * i + 1] * s;
    out[2 * i + 1] = x[2 * i] * s + x[2 * i + 1] * c;
  }
  return out;
}

std::size_t sort_rank(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  // Descending score; among equal scores the truth (index 0) goes last.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (a == 0 || b == 0) return b == 0;
    return a < b;
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), 0) - order.begin()) + 1;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace posenc::testing
