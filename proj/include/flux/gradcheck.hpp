#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "flux/ops.hpp"

namespace flux {

// Central finite-difference check of analytic gradients.
//
// loss_fn must be scalar-valued and deterministic in the parameter values.
// Returns max over all parameter entries of
//   |analytic - central_difference| / max(1, |central_difference|).
template <typename S>
double grad_check(const std::function<Tensor<S>()>& loss_fn,
                  std::vector<Tensor<S>> params, double eps) {
  if (eps <= 0) throw std::invalid_argument("grad_check: eps must be > 0");
  for (auto& p : params) p.set_requires_grad(true);
  Tensor<S> loss = loss_fn();
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw std::invalid_argument("grad_check: non-finite loss");
  loss.backward();
  std::vector<typename Tensor<S>::Vec> analytic;
  for (auto& p : params) {
    if (p.grad().size() == 0) p.zero_grad();  // unreachable from the loss
    analytic.push_back(p.grad());
  }

  double max_err = 0.0;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (Index i = 0; i < p.size(); ++i) {
      const S orig = p.value()[i];
      p.value()[i] = orig + static_cast<S>(eps);
      double lp = static_cast<double>(loss_fn().item());
      p.value()[i] = orig - static_cast<S>(eps);
      double lm = static_cast<double>(loss_fn().item());
      p.value()[i] = orig;
      double fd = (lp - lm) / (2.0 * eps);
      double err = std::abs(static_cast<double>(analytic[pi][i]) - fd) /
                   std::max(1.0, std::abs(fd));
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace flux
