#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "elicit/tensor.hpp"

namespace testing {

using elicit::ad::Shape;
using elicit::ad::Tensor;

struct GradCheck {
  std::vector<double> analytic;
  std::vector<double> numeric;

  // ||analytic - numeric|| / max(||analytic||, ||numeric||, tiny)
  double relative_error() const {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  }
};

// Autodiff gradient of the scalar f(x) against central differences.
inline GradCheck grad_check(const std::function<Tensor(const Tensor&)>& f, const Shape& shape,
                            std::vector<double> x0, double h = 1e-6) {
  GradCheck out;
  Tensor x = Tensor::from(shape, x0, true);
  f(x).backward();
  out.analytic.assign(x.grad().begin(), x.grad().end());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    auto xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    const double fp = f(Tensor::from(shape, xp)).item();
    const double fm = f(Tensor::from(shape, xm)).item();
    out.numeric.push_back((fp - fm) / (2 * h));
  }
  return out;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace testing
