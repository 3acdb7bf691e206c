#pragma once

// Reference implementations used only by the tests. Each one is written
// differently from the library code it checks (brute force, pairwise
// counting, arbitrary precision).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#ifdef AUXUE_WITH_MPFR
#include <mpfr.h>
#endif

namespace oracle {

// Pairwise U statistic: P(score_pos > score_neg) + 1/2 P(tie).
inline double auc_pairwise(std::span<const double> s, std::span<const int> y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Every distinct score is tried as a threshold (predict positive when
// score >= tau); each point is counted from scratch. The area sums recall
// increments weighted by the best precision at that recall or beyond.
inline double aupr_enumerate(std::span<const double> s, std::span<const int> y) {
  std::vector<double> taus(s.begin(), s.end());
  std::sort(taus.begin(), taus.end(), std::greater<>());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  double positives = 0.0;
  for (int l : y) positives += l;
  std::vector<double> rec, prec;
  for (double tau : taus) {
    double tp = 0.0, pp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= tau) {
        pp += 1.0;
        tp += y[i];
      }
    }
    rec.push_back(tp / positives);
    prec.push_back(tp / pp);
  }
  double area = 0.0, last = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = i; j < rec.size(); ++j) best = std::max(best, prec[j]);
    area += (rec[i] - last) * best;
    last = rec[i];
  }
  return area;
}

// Sort, then cut the ranks into K contiguous chunks whose sizes differ by at
// most one. Returns the class of every input position.
inline std::vector<std::size_t> chunk_classes(std::span<const double> e, std::size_t k) {
  const std::size_t n = e.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return e[a] < e[b]; });
  std::vector<std::size_t> cls(n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t r = c * n / k; r < (c + 1) * n / k; ++r) cls[idx[r]] = c;
  }
  return cls;
}

inline std::vector<std::size_t> class_counts(std::span<const std::size_t> cls, std::size_t k) {
  std::vector<std::size_t> c(k, 0);
  for (std::size_t v : cls) ++c[v];
  return c;
}

#ifdef AUXUE_WITH_MPFR
// log Gamma and digamma at 256-bit precision.
inline double mp_lgamma(double x) {
  mpfr_t a;
  mpfr_init2(a, 256);
  mpfr_set_d(a, x, MPFR_RNDN);
  int sign = 0;
  mpfr_lgamma(a, &sign, a, MPFR_RNDN);
  const double r = mpfr_get_d(a, MPFR_RNDN);
  mpfr_clear(a);
  return r;
}

inline double mp_digamma(double x) {
  mpfr_t a;
  mpfr_init2(a, 256);
  mpfr_set_d(a, x, MPFR_RNDN);
  mpfr_digamma(a, a, MPFR_RNDN);
  const double r = mpfr_get_d(a, MPFR_RNDN);
  mpfr_clear(a);
  return r;
}
#endif

// |a - b| / max(1, |b|)
inline double mixed_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace oracle
