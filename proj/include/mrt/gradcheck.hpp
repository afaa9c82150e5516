#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/param_store.hpp"

namespace mrt {

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

/// |a - b| / max(1, |a|, |b|)
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("max_relative_error: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

/// Central-difference gradient of `f` over every scalar of `params`.
inline std::vector<double> finite_diff_grad(const std::function<double(const ParamStore&)>& f,
                                            const ParamStore& params, double step = kDefaultFiniteDiffStep) {
  if (!(step > 0.0)) throw Error("finite_diff_grad: step must be positive");
  ParamStore work = params;
  std::vector<double> grad(work.size());
  for (std::size_t k = 0; k < work.size(); ++k) {
    const double orig = work.flat(k);
    work.flat(k) = orig + step;
    const double up = f(work);
    work.flat(k) = orig - step;
    const double down = f(work);
    work.flat(k) = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at parameter " + std::to_string(k));
    }
    grad[k] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace mrt
