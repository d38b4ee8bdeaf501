#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace vtlab {

// central finite differences of a scalar function of a flat parameter vector
inline std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::vector<double> params,
    double h = 1e-5) {
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = f(params);
    params[i] = saved - h;
    const double down = f(params);
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// max over components of |a_i - b_i| / max(|b_i|, floor)
inline double max_relative_error(std::span<const double> a, std::span<const double> b,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double err = std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace vtlab
