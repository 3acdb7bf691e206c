#pragma once

#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include "auxue/diffkit/graph.hpp"
#include "auxue/diffkit/special.hpp"
#include "auxue/error.hpp"

// Negative log-likelihood losses for the aleatoric head. Every loss takes
// per-sample distribution parameters and the main-task residual
// r = y - f(x) as [n x 1] tensors and returns the batch mean.
namespace auxue::loss {

using ad::Var;

enum class Variant { Gaussian, Laplace, Ggau, Nig };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Gaussian: return "gaussian";
    case Variant::Laplace: return "laplace";
    case Variant::Ggau: return "ggau";
    case Variant::Nig: return "nig";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "gaussian") return Variant::Gaussian;
  if (s == "laplace") return Variant::Laplace;
  if (s == "ggau") return Variant::Ggau;
  if (s == "nig") return Variant::Nig;
  throw ContractError("unknown distribution '" + s + "' (expected gaussian|laplace|ggau|nig)");
}

// Number of positive parameters the head emits per sample.
inline std::size_t head_width(Variant v) {
  switch (v) {
    case Variant::Gaussian:
    case Variant::Laplace: return 1;
    case Variant::Ggau: return 2;
    case Variant::Nig: return 3;
  }
  return 1;
}

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(op, ad::to_string(a.shape()), ad::to_string(b.shape()));
  }
}

inline void require_positive(const Var& v, const char* op, const char* name) {
  for (double x : v.value().data()) {
    if (!(x > 0.0)) {
      throw DomainError(std::string(op) + ": " + name + " must be positive, got " +
                        std::to_string(x));
    }
  }
}

}  // namespace detail

// mean((pred - target)^2)
inline Var mse_loss(const Var& pred, const Var& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const Var r = pred - target;
  return ad::mean(r * r);
}

// mean(1/2 log s + r^2 / (2 s)). `variance` is the variance, not the standard
// deviation.
inline Var gaussian_nll(const Var& variance, const Var& residual) {
  detail::require_same_shape(variance, residual, "gaussian_nll");
  detail::require_positive(variance, "gaussian_nll", "variance");
  return ad::mean(0.5 * ad::log(variance) + (residual * residual) / (2.0 * variance));
}

// mean(log(2b) + |r| / b)
inline Var laplace_nll(const Var& scale, const Var& residual) {
  detail::require_same_shape(scale, residual, "laplace_nll");
  detail::require_positive(scale, "laplace_nll", "scale");
  return ad::mean(ad::log(2.0 * scale) + ad::abs(residual) / scale);
}

// Generalized Gaussian with scale a and shape b:
// mean((|r| / a)^b - log(b / a) + lgamma(1 / b))
inline Var ggau_nll(const Var& scale, const Var& shape, const Var& residual) {
  detail::require_same_shape(scale, residual, "ggau_nll");
  detail::require_same_shape(shape, residual, "ggau_nll");
  detail::require_positive(scale, "ggau_nll", "scale");
  detail::require_positive(shape, "ggau_nll", "shape");
  const Var ratio = ad::abs(residual) / scale;
  return ad::mean(ad::pow(ratio, shape) - ad::log(shape / scale) + ad::lgamma(1.0 / shape));
}

struct NigOptions {
  double lambda = 0.01;
  // Receives a warning when some alpha <= 1/2; null silences it.
  std::ostream* warnings = nullptr;
};

// Normal-Inverse-Gamma evidential NLL with the |r|-weighted evidence
// regulariser: L1 + lambda * L2 where, with omega = 2 beta (1 + nu),
//   L1 = 1/2 log(pi / nu) - alpha log omega + (alpha + 1/2) log(r^2 nu + omega)
//        + lgamma(alpha) - lgamma(alpha + 1/2)
//   L2 = |r| (2 nu + alpha)
inline Var nig_nll(const Var& nu, const Var& alpha, const Var& beta, const Var& residual,
                   const NigOptions& options = {}) {
  for (const Var* v : {&nu, &alpha, &beta}) detail::require_same_shape(*v, residual, "nig_nll");
  detail::require_positive(nu, "nig_nll", "nu");
  detail::require_positive(alpha, "nig_nll", "alpha");
  detail::require_positive(beta, "nig_nll", "beta");
  if (options.warnings) {
    std::size_t low = 0;
    for (double a : alpha.value().data()) low += a <= 0.5 ? 1 : 0;
    if (low > 0) {
      *options.warnings << "warning: nig_nll: " << low
                        << " sample(s) with alpha <= 0.5 (heavy-tailed predictive)\n";
    }
  }
  const Var omega = 2.0 * beta * (1.0 + nu);
  const Var l1 = 0.5 * ad::log(std::numbers::pi / nu) - alpha * ad::log(omega) +
                 (alpha + 0.5) * ad::log(residual * residual * nu + omega) + ad::lgamma(alpha) -
                 ad::lgamma(alpha + 0.5);
  const Var l2 = ad::abs(residual) * (2.0 * nu + alpha);
  return ad::mean(l1 + options.lambda * l2);
}

// Loss for a head emitting `params` [n x head_width(v)] (already positive).
inline Var aleatoric_nll(Variant v, const Var& params, const Var& residual,
                         const NigOptions& nig = {}) {
  switch (v) {
    case Variant::Gaussian: return gaussian_nll(params, residual);
    case Variant::Laplace: return laplace_nll(params, residual);
    case Variant::Ggau:
      return ggau_nll(ad::slice_cols(params, 0, 1), ad::slice_cols(params, 1, 1), residual);
    case Variant::Nig:
      return nig_nll(ad::slice_cols(params, 0, 1), ad::slice_cols(params, 1, 1),
                     ad::slice_cols(params, 2, 1), residual, nig);
  }
  throw ContractError("aleatoric_nll: unknown variant");
}

// Predicted E|r| for one sample's head parameters, used as the scalar
// aleatoric uncertainty. For Laplace this is the scale b itself.
//   gaussian: sqrt(2 s / pi)
//   ggau:     a * Gamma(2/b) / Gamma(1/b)
//   nig:      sqrt(2/pi) * sqrt(E[sigma^2]) with E[sigma^2] = beta / (alpha - 1),
//             alpha - 1 floored at 1e-6
inline double expected_abs_error(Variant v, std::span<const double> p) {
  switch (v) {
    case Variant::Gaussian: return std::sqrt(2.0 * p[0] / std::numbers::pi);
    case Variant::Laplace: return p[0];
    case Variant::Ggau:
      return p[0] * std::exp(special::lgamma(2.0 / p[1]) - special::lgamma(1.0 / p[1]));
    case Variant::Nig: {
      const double var = p[2] / std::max(p[1] - 1.0, 1e-6);
      return std::sqrt(2.0 / std::numbers::pi) * std::sqrt(var);
    }
  }
  return p[0];
}

}  // namespace auxue::loss
