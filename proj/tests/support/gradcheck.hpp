#pragma once

// Central finite-difference oracle used by the gradient tests. It only
// evaluates the scalar loss closure, so it is independent of backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rnc/tensor.hpp"

namespace rnc::testing {

inline std::vector<double> numeric_gradient(const std::function<double()>& loss, Tensor& wrt,
                                            double step = 1e-4) {
  auto values = wrt.mutable_values();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double plus = loss();
    values[i] = saved - step;
    const double minus = loss();
    values[i] = saved;
    out[i] = (plus - minus) / (2.0 * step);
  }
  return out;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct GradCheckResult {
  double worst = 0.0;
  std::string where;
};

/// Builds the loss once, back-propagates, then compares every listed tensor's
/// gradient against central differences of `build().item()`.
inline GradCheckResult check_gradients(const std::function<Tensor()>& build,
                                       std::vector<std::pair<std::string, Tensor>> wrt,
                                       double step = 1e-4) {
  for (auto& [name, t] : wrt) t.zero_grad();
  auto loss = build();
  backward(loss);
  GradCheckResult result;
  for (auto& [name, t] : wrt) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto numeric = numeric_gradient([&] { return build().item(); }, t, step);
    const double err = max_relative_error(analytic, numeric);
    if (err >= result.worst) {
      result.worst = err;
      result.where = name;
    }
  }
  return result;
}

}  // namespace rnc::testing
