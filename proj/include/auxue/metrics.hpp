#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "auxue/error.hpp"

// Uncertainty evaluation: sparsification curves with AUSE / AURG, ROC-AUC,
// precision-recall AUPR and the uncertainty calibration error.
//
// Ties are broken everywhere by input index (stable sorts), so results are
// deterministic for tied scores.
namespace auxue::metrics {

enum class ErrorMetric { Rmse, Rel };

inline const char* to_string(ErrorMetric m) { return m == ErrorMetric::Rmse ? "rmse" : "rel"; }

enum class CurveKind { Predictive, Oracle, Random };

struct SparsificationCurve {
  CurveKind kind = CurveKind::Predictive;
  std::vector<double> fractions;
  std::vector<double> values;
};

struct SparsificationCurves {
  SparsificationCurve predictive;
  SparsificationCurve oracle;
  SparsificationCurve random;
  // Items dropped before evaluation (REL with a zero target).
  std::size_t excluded = 0;
};

namespace detail {

inline void require_same_length(std::size_t a, std::size_t b, const char* op) {
  if (a != b) throw ShapeError(op, std::to_string(a), std::to_string(b));
}

// Indices ordered by descending key, ties by ascending index.
inline std::vector<std::size_t> descending_order(std::span<const double> key) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  return idx;
}

// Retained-set metric after removing the first `removed` items of `order`.
// `per_item` is r^2 for RMSE and |r|/|y| for REL.
inline double retained_metric(std::span<const double> per_item,
                              std::span<const std::size_t> order, std::size_t removed,
                              ErrorMetric metric) {
  double s = 0.0;
  for (std::size_t i = removed; i < order.size(); ++i) s += per_item[order[i]];
  const double m = s / static_cast<double>(order.size() - removed);
  return metric == ErrorMetric::Rmse ? std::sqrt(m) : m;
}

}  // namespace detail

// Removal fractions 0, step, 2 step, ... up to 0.95.
inline std::vector<double> removal_fractions(double step = 0.05) {
  if (!(step > 0.0) || step > 0.95) throw ContractError("removal_fractions: bad step");
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) * step;
    if (t > 0.95 + 1e-9) break;
    out.push_back(t);
  }
  return out;
}

// Sparsification curves for residuals r with uncertainty scores. At each
// fraction t the ceil(t N) items with the highest score (predictive) or the
// highest per-item error (oracle) are removed; the random curve is the
// full-set error at every t. `targets` is only read for REL, where items
// with a zero target are dropped and counted in `excluded`.
inline SparsificationCurves sparsification_curve(std::span<const double> residuals,
                                                 std::span<const double> scores,
                                                 std::span<const double> targets,
                                                 ErrorMetric metric, double step = 0.05) {
  detail::require_same_length(residuals.size(), scores.size(), "sparsification_curve");
  if (metric == ErrorMetric::Rel) {
    detail::require_same_length(residuals.size(), targets.size(), "sparsification_curve");
  }
  std::vector<double> per_item;
  std::vector<double> kept_scores;
  std::size_t excluded = 0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (metric == ErrorMetric::Rel) {
      if (targets[i] == 0.0) {
        ++excluded;
        continue;
      }
      per_item.push_back(std::abs(residuals[i]) / std::abs(targets[i]));
    } else {
      per_item.push_back(residuals[i] * residuals[i]);
    }
    kept_scores.push_back(scores[i]);
  }
  if (per_item.size() < 20) {
    throw ContractError("sparsification_curve: need at least 20 evaluable items, got " +
                        std::to_string(per_item.size()));
  }
  const std::size_t n = per_item.size();
  const auto by_score = detail::descending_order(kept_scores);
  const auto by_error = detail::descending_order(per_item);

  SparsificationCurves out;
  out.excluded = excluded;
  out.predictive.kind = CurveKind::Predictive;
  out.oracle.kind = CurveKind::Oracle;
  out.random.kind = CurveKind::Random;
  const double full = detail::retained_metric(per_item, by_error, 0, metric);
  for (double t : removal_fractions(step)) {
    const auto removed =
        static_cast<std::size_t>(std::ceil(t * static_cast<double>(n) - 1e-9));
    for (auto* c : {&out.predictive, &out.oracle, &out.random}) c->fractions.push_back(t);
    out.predictive.values.push_back(detail::retained_metric(per_item, by_score, removed, metric));
    out.oracle.values.push_back(detail::retained_metric(per_item, by_error, removed, metric));
    out.random.values.push_back(full);
  }
  return out;
}

inline double trapezoid(std::span<const double> x, std::span<const double> y) {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return area;
}

struct AuseAurg {
  double ause = 0.0;
  double aurg = 0.0;
};

// AUSE = area of (predictive - oracle), AURG = area of (random - predictive).
inline AuseAurg ause_aurg(const SparsificationCurves& c) {
  if (c.predictive.fractions != c.oracle.fractions ||
      c.predictive.fractions != c.random.fractions) {
    throw ContractError("ause_aurg: curves do not share a fraction grid");
  }
  const auto& t = c.predictive.fractions;
  std::vector<double> gap(t.size()), gain(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    gap[i] = c.predictive.values[i] - c.oracle.values[i];
    gain[i] = c.random.values[i] - c.predictive.values[i];
  }
  return {trapezoid(t, gap), trapezoid(t, gain)};
}

namespace detail {

inline void count_classes(std::span<const int> labels, std::size_t& pos, std::size_t& neg) {
  pos = neg = 0;
  for (int l : labels) {
    if (l == 1) ++pos;
    else if (l == 0) ++neg;
    else throw ContractError("labels must be 0 or 1");
  }
}

}  // namespace detail

// Mann-Whitney U / (n+ n-) with midranks for ties. Label 1 is the positive
// class; higher scores should indicate positives.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::require_same_length(scores.size(), labels.size(), "roc_auc");
  std::size_t pos = 0, neg = 0;
  detail::count_classes(labels, pos, neg);
  if (pos == 0 || neg == 0) throw ContractError("roc_auc: both classes must be present");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

// Area under the precision-recall curve. Thresholds sweep the distinct
// scores in descending order (tied scores enter together); each recall step
// is weighted by the precision envelope max_{r' >= r} P(r').
inline double pr_aupr(std::span<const double> scores, std::span<const int> labels) {
  detail::require_same_length(scores.size(), labels.size(), "pr_aupr");
  std::size_t pos = 0, neg = 0;
  detail::count_classes(labels, pos, neg);
  if (pos == 0) throw ContractError("pr_aupr: no positive labels");
  const auto order = detail::descending_order(scores);
  std::vector<double> recall, precision;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] == 1 ? 1 : 0;
      ++j;
    }
    seen = j;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double area = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    area += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return area;
}

// Uncertainty calibration error: n_bins equal-width bins over
// [min, max] of the uncertainties, sum_b |b|/N * |mean err(b) - mean unc(b)|.
inline double uce(std::span<const double> errors, std::span<const double> uncertainties,
                  std::size_t n_bins = 15) {
  detail::require_same_length(errors.size(), uncertainties.size(), "uce");
  if (n_bins < 2) throw ContractError("uce: n_bins must be >= 2");
  if (errors.empty()) throw ContractError("uce: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(uncertainties.begin(), uncertainties.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(n_bins);
  std::vector<double> err_sum(n_bins, 0.0), unc_sum(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < errors.size(); ++i) {
    std::size_t b = 0;
    if (width > 0.0) {
      b = static_cast<std::size_t>(std::floor((uncertainties[i] - lo) / width));
      b = std::min(b, n_bins - 1);
    }
    err_sum[b] += errors[i];
    unc_sum[b] += uncertainties[i];
    ++count[b];
  }
  const double n = static_cast<double>(errors.size());
  double total = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    total += (c / n) * std::abs(err_sum[b] / c - unc_sum[b] / c);
  }
  return total;
}

// Headline uncertainty metrics for one method on one evaluation set.
struct MetricsReport {
  double ause_rel = 0.0;
  double ause_rmse = 0.0;
  double aurg_rel = 0.0;
  double aurg_rmse = 0.0;
  double uce = 0.0;
  std::size_t rel_excluded = 0;
  SparsificationCurves rmse_curves;
  SparsificationCurves rel_curves;
};

// Sparsification metrics (both error metrics) plus UCE of |r| against the
// predicted expected absolute error.
inline MetricsReport evaluate_aleatoric(std::span<const double> residuals,
                                        std::span<const double> targets,
                                        std::span<const double> uncertainties) {
  MetricsReport r;
  r.rmse_curves = sparsification_curve(residuals, uncertainties, targets, ErrorMetric::Rmse);
  r.rel_curves = sparsification_curve(residuals, uncertainties, targets, ErrorMetric::Rel);
  const auto a = ause_aurg(r.rmse_curves);
  const auto b = ause_aurg(r.rel_curves);
  r.ause_rmse = a.ause;
  r.aurg_rmse = a.aurg;
  r.ause_rel = b.ause;
  r.aurg_rel = b.aurg;
  r.rel_excluded = r.rel_curves.excluded;
  std::vector<double> abs_err(residuals.size());
  for (std::size_t i = 0; i < abs_err.size(); ++i) abs_err[i] = std::abs(residuals[i]);
  r.uce = uce(abs_err, uncertainties);
  return r;
}

}  // namespace auxue::metrics
