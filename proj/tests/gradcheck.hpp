#pragma once

// Central finite-difference oracle used by the gradient tests. It only touches
// tensor values and the forward function, never the backward rules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pivotmt/ops.hpp"
#include "pivotmt/rng.hpp"
#include "pivotmt/tensor.hpp"

namespace pivotmt::testing {

struct GradCheckResult {
  double worst_rel = 0.0;
  std::size_t checked = 0;
  std::string worst_where;
};

inline double rel_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < 1e-7) return std::abs(analytic - numeric) < 1e-9 ? 0.0 : std::abs(analytic - numeric) / 1e-7;
  return std::abs(analytic - numeric) / scale;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// loss_fn must rebuild the graph from the current input values on each call.
// If coords is nonempty, only those (input, flat index) pairs are checked.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                  double step = 1e-4,
                                  std::vector<std::pair<std::size_t, std::size_t>> coords = {}) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  if (coords.empty()) {
    for (std::size_t i = 0; i < inputs.size(); ++i)
      for (std::size_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
  }
  GradCheckResult res;
  for (auto [i, j] : coords) {
    auto& t = inputs[i];
    const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
    const double orig = t.values()[j];
    double plus, minus;
    {
      NoGradGuard ng;
      t.mutable_values()[j] = orig + step;
      plus = loss_fn().item();
      t.mutable_values()[j] = orig - step;
      minus = loss_fn().item();
      t.mutable_values()[j] = orig;
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double e = rel_error(analytic, numeric);
    ++res.checked;
    if (e > res.worst_rel) {
      res.worst_rel = e;
      res.worst_where = "input " + std::to_string(i) + " index " + std::to_string(j) +
                        " analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric);
    }
  }
  return res;
}

// Weighted sum with fixed random weights, so upstream gradients are not uniform.
inline Tensor probe_loss(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

}  // namespace pivotmt::testing
