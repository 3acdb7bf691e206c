#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "auxue/diffkit/graph.hpp"
#include "auxue/diffkit/special.hpp"
#include "auxue/error.hpp"

// Discretization-induced Dirichlet posterior: main-task errors are split into
// K equally populated classes, and an evidential head learns a Dirichlet over
// those classes whose strength measures epistemic uncertainty.
namespace auxue::dido {

using ad::Tensor;
using ad::Var;

// ---------------------------------------------------------------------------
// Discretization

// Empirical quantile of sorted data, linear interpolation between order
// statistics at position q * (n - 1).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// K classes bounded by K + 1 non-decreasing cut values. Class 0 covers
// [t0, t1]; class j > 0 covers (tj, tj+1]. Values below t0 map to class 0
// and values above tK to class K - 1, so a frozen spec can label new data.
struct DiscretizationSpec {
  std::size_t k = 0;
  std::vector<double> thresholds;

  std::size_t classify(double error) const {
    auto first = thresholds.begin() + 1;
    auto it = std::lower_bound(first, thresholds.end(), error);
    if (it == thresholds.end()) return k - 1;
    return static_cast<std::size_t>(it - first);
  }

  std::vector<std::size_t> classify(std::span<const double> errors) const {
    std::vector<std::size_t> out;
    out.reserve(errors.size());
    for (double e : errors) out.push_back(classify(e));
    return out;
  }

  bool operator==(const DiscretizationSpec&) const = default;
};

namespace detail {

inline void check_errors(std::span<const double> errors, std::size_t k, const char* op) {
  if (k < 2) throw ContractError(std::string(op) + ": K must be >= 2, got " + std::to_string(k));
  if (errors.empty()) throw ContractError(std::string(op) + ": empty error vector");
  if (errors.size() < k) {
    throw ContractError(std::string(op) + ": " + std::to_string(errors.size()) +
                        " errors for K = " + std::to_string(k));
  }
  for (double e : errors) {
    if (!std::isfinite(e)) throw DomainError(std::string(op) + ": non-finite error value");
  }
}

inline std::vector<double> quantile_cuts(std::vector<double> values, std::size_t k) {
  std::sort(values.begin(), values.end());
  std::vector<double> cuts(k + 1);
  for (std::size_t j = 0; j <= k; ++j) {
    cuts[j] = quantile_sorted(values, static_cast<double>(j) / static_cast<double>(k));
  }
  cuts.front() = values.front();
  cuts.back() = values.back();
  return cuts;
}

}  // namespace detail

// Cut values at the j/K quantiles (j = 0..K) of the given errors. Ties are
// allowed: a constant error vector puts every datum in class 0.
inline DiscretizationSpec fit_discretization(std::span<const double> errors, std::size_t k) {
  detail::check_errors(errors, k, "fit_discretization");
  return {k, detail::quantile_cuts({errors.begin(), errors.end()}, k)};
}

// Same quantile rule with cuts computed from one sample's valid elements.
// Elements with mask == false get no target.
inline std::vector<std::optional<std::size_t>> discretize_per_sample(
    std::span<const double> error_map, std::size_t k, std::span<const bool> valid = {}) {
  if (!valid.empty() && valid.size() != error_map.size()) {
    throw ShapeError("discretize_per_sample", std::to_string(error_map.size()),
                     std::to_string(valid.size()));
  }
  std::vector<double> kept;
  for (std::size_t i = 0; i < error_map.size(); ++i) {
    if (valid.empty() || valid[i]) kept.push_back(error_map[i]);
  }
  detail::check_errors(kept, k, "discretize_per_sample");
  const DiscretizationSpec spec{k, detail::quantile_cuts(kept, k)};
  std::vector<std::optional<std::size_t>> out(error_map.size());
  for (std::size_t i = 0; i < error_map.size(); ++i) {
    if (valid.empty() || valid[i]) out[i] = spec.classify(error_map[i]);
  }
  return out;
}

struct OneHotTarget {
  std::size_t index = 0;
  std::size_t k = 0;

  std::vector<double> vector() const {
    std::vector<double> v(k, 0.0);
    v.at(index) = 1.0;
    return v;
  }
};

// [n x K] one-hot rows.
inline Tensor one_hot(std::span<const std::size_t> classes, std::size_t k) {
  Tensor out = Tensor::zeros({classes.size(), k});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= k) throw ContractError("one_hot: class index out of range");
    out.at(i, classes[i]) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dirichlet quantities on a single evidence vector

struct DirichletOutput {
  std::vector<double> evidence;
  std::vector<double> alpha;
  double strength = 0.0;

  std::size_t k() const { return alpha.size(); }

  // Mean of the Dirichlet, alpha / S.
  std::vector<double> expected_probabilities() const {
    std::vector<double> p(alpha.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = alpha[i] / strength;
    return p;
  }
};

inline DirichletOutput evidence_to_alpha(std::span<const double> evidence) {
  DirichletOutput d;
  d.evidence.assign(evidence.begin(), evidence.end());
  d.alpha.reserve(evidence.size());
  for (double e : evidence) {
    if (!(e >= 0.0)) {
      throw ContractError("evidence_to_alpha: evidence must be non-negative, got " +
                          std::to_string(e));
    }
    d.alpha.push_back(e + 1.0);
    d.strength += e + 1.0;
  }
  return d;
}

namespace detail {

inline void require_positive_alpha(std::span<const double> alpha, const char* op) {
  for (double a : alpha) {
    if (!(a > 0.0)) throw DomainError(std::string(op) + ": concentration must be positive");
  }
}

}  // namespace detail

// KL(Dir(alpha) || Dir(1)) =
//   lgamma(S) - sum lgamma(a_k) - lgamma(K) + sum (a_k - 1)(psi(a_k) - psi(S))
inline double kl_dirichlet_to_uniform(std::span<const double> alpha) {
  detail::require_positive_alpha(alpha, "kl_dirichlet_to_uniform");
  double s = 0.0;
  for (double a : alpha) s += a;
  const double psi_s = special::digamma(s);
  double kl = special::lgamma(s) - special::lgamma(static_cast<double>(alpha.size()));
  for (double a : alpha) kl += -special::lgamma(a) + (a - 1.0) * (special::digamma(a) - psi_s);
  return kl;
}

// Single-sample loss: psi(S) - psi(alpha_target) + lambda * KL(Dir(alpha) || Dir(1)).
inline double dido_loss(std::span<const double> evidence, const OneHotTarget& target,
                        double lambda) {
  if (lambda < 0.0) throw ContractError("dido_loss: lambda must be >= 0");
  const DirichletOutput d = evidence_to_alpha(evidence);
  if (target.index >= d.k()) throw ContractError("dido_loss: target class out of range");
  return special::digamma(d.strength) - special::digamma(d.alpha[target.index]) +
         lambda * kl_dirichlet_to_uniform(d.alpha);
}

// K / S in (0, 1].
inline double epistemic_uncertainty(const DirichletOutput& d) {
  return static_cast<double>(d.k()) / d.strength;
}

// log Dir(pi | alpha) = lgamma(S) - sum lgamma(a_k) + sum (a_k - 1) log pi_k
inline double dirichlet_log_pdf(std::span<const double> pi, std::span<const double> alpha) {
  if (pi.size() != alpha.size()) {
    throw ShapeError("dirichlet_log_pdf", std::to_string(pi.size()), std::to_string(alpha.size()));
  }
  detail::require_positive_alpha(alpha, "dirichlet_log_pdf");
  double total = 0.0;
  for (double p : pi) {
    if (!(p > 0.0)) throw DomainError("dirichlet_log_pdf: point off the open simplex");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DomainError("dirichlet_log_pdf: point does not sum to 1");
  }
  double s = 0.0;
  double out = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    s += alpha[k];
    out += -special::lgamma(alpha[k]) + (alpha[k] - 1.0) * std::log(pi[k]);
  }
  return out + special::lgamma(s);
}

// Index of the largest concentration (lowest index on ties). The error class
// it names is a coarse aleatoric readout.
inline std::size_t aleatoric_from_dirichlet(std::span<const double> evidence) {
  if (evidence.empty()) throw ContractError("aleatoric_from_dirichlet: empty evidence");
  return static_cast<std::size_t>(std::max_element(evidence.begin(), evidence.end()) -
                                  evidence.begin());
}

// ---------------------------------------------------------------------------
// Batched, differentiable versions

// Row-wise KL(Dir(alpha_i) || Dir(1)) for alpha [n x K]; returns [n x 1].
inline Var kl_dirichlet_to_uniform(const Var& alpha) {
  const double k = static_cast<double>(alpha.value().cols());
  const Var s = ad::row_sum(alpha);
  const Var psi_s = ad::digamma(s);
  const Var am1 = alpha - 1.0;
  return ad::lgamma(s) - ad::row_sum(ad::lgamma(alpha)) - special::lgamma(k) +
         ad::row_sum(am1 * ad::digamma(alpha)) - psi_s * ad::row_sum(am1);
}

// Batch mean of sum_k t_k (psi(S) - psi(alpha_k)) + lambda KL(Dir(alpha) || Dir(1))
// with alpha = evidence + 1. `targets` are one-hot rows [n x K].
inline Var dido_loss(const Var& evidence, const Tensor& targets, double lambda) {
  if (evidence.shape() != targets.shape()) {
    throw ShapeError("dido_loss", ad::to_string(evidence.shape()), ad::to_string(targets.shape()));
  }
  if (lambda < 0.0) throw ContractError("dido_loss: lambda must be >= 0");
  for (double e : evidence.value().data()) {
    if (!(e >= 0.0)) throw DomainError("dido_loss: evidence must be non-negative");
  }
  const Var alpha = evidence + 1.0;
  const Var t = ad::constant(targets);
  const Var s = ad::row_sum(alpha);
  const Var nll = ad::digamma(s) * ad::row_sum(t) - ad::row_sum(t * ad::digamma(alpha));
  if (lambda == 0.0) return ad::mean(nll);
  return ad::mean(nll + lambda * kl_dirichlet_to_uniform(alpha));
}

// L_AuxUE = L(aleatoric) + L(epistemic)
inline Var combined_auxue_loss(const Var& aleatoric, const Var& epistemic) {
  if (!std::isfinite(aleatoric.item()) || !std::isfinite(epistemic.item())) {
    throw DivergenceError("combined_auxue_loss: non-finite component");
  }
  return aleatoric + epistemic;
}

inline double combined_auxue_loss(double aleatoric, double epistemic) {
  if (!std::isfinite(aleatoric) || !std::isfinite(epistemic)) {
    throw DivergenceError("combined_auxue_loss: non-finite component");
  }
  return aleatoric + epistemic;
}

// K / S per row of an evidence matrix [n x K].
inline std::vector<double> epistemic_scores(const Tensor& evidence) {
  std::vector<double> out(evidence.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = epistemic_uncertainty(evidence_to_alpha(evidence.row_span(i)));
  }
  return out;
}

}  // namespace auxue::dido
