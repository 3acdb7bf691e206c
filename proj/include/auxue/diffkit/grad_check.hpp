#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "auxue/diffkit/graph.hpp"

namespace auxue::ad {

// Scalar function of a list of parameter Vars.
using ScalarFn = std::function<Var(std::span<const Var>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

// Compares backward() against central differences at `point`:
// max over coordinates of |analytic - fd| / max(1, |fd|).
inline GradCheckResult grad_check_detailed(const ScalarFn& f, const std::vector<Tensor>& point,
                                           double h = 1e-5) {
  std::vector<Var> params;
  params.reserve(point.size());
  for (const auto& t : point) params.push_back(parameter(t));
  const Var root = f(params);
  if (!std::isfinite(root.item())) {
    throw DomainError("grad_check: non-finite function value at the base point");
  }
  const Gradients grads = backward(root);

  auto eval = [&](const std::vector<Tensor>& pt) {
    std::vector<Var> cs;
    cs.reserve(pt.size());
    for (const auto& t : pt) cs.push_back(constant(t));
    const double v = f(cs).item();
    if (!std::isfinite(v)) {
      throw DomainError("grad_check: non-finite function value at a probe point");
    }
    return v;
  };

  GradCheckResult result;
  std::vector<Tensor> probe = point;
  for (std::size_t p = 0; p < point.size(); ++p) {
    const Tensor analytic = grads[params[p]];
    for (std::size_t i = 0; i < point[p].size(); ++i) {
      const double orig = point[p][i];
      probe[p][i] = orig + h;
      const double up = eval(probe);
      probe[p][i] = orig - h;
      const double down = eval(probe);
      probe[p][i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = p;
        result.worst_index = i;
      }
    }
  }
  return result;
}

inline double grad_check(const ScalarFn& f, const std::vector<Tensor>& point, double h = 1e-5) {
  return grad_check_detailed(f, point, h).max_relative_error;
}

}  // namespace auxue::ad
