#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "auxue/error.hpp"

namespace auxue::special {

namespace detail {

inline void require_positive(double x, const char* fn) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(fn) + ": argument must be positive and finite, got " +
                      std::to_string(x));
  }
}

// Shift threshold for the Stirling series of log-gamma. At x >= 10 the first
// omitted term is below 2e-18.
constexpr double kLgammaShift = 10.0;

// Shift threshold for the digamma / trigamma asymptotic series.
constexpr double kPsiShift = 6.0;

}  // namespace detail

// log Gamma(x) for x > 0.
//
// For x < 10 the argument is shifted up with Gamma(x) = Gamma(x + n) / prod(x + i),
// the product being accumulated directly (it stays far from overflow for
// n <= 10) and its logarithm taken once. The shifted value is evaluated by
// the Stirling series truncated after the B_16 term.
inline double lgamma(double x) {
  detail::require_positive(x, "lgamma");
  double shift_product = 1.0;
  double z = x;
  while (z < detail::kLgammaShift) {
    shift_product *= z;
    z += 1.0;
  }
  const double inv = 1.0 / z;
  const double inv2 = inv * inv;
  // Sum_k B_2k / (2k (2k-1) z^(2k-1)), Horner form in 1/z^2.
  const double series =
      inv * (1.0 / 12.0 +
             inv2 * (-1.0 / 360.0 +
                     inv2 * (1.0 / 1260.0 +
                             inv2 * (-1.0 / 1680.0 +
                                     inv2 * (1.0 / 1188.0 +
                                             inv2 * (-691.0 / 360360.0 +
                                                     inv2 * (1.0 / 156.0 +
                                                             inv2 * (-3617.0 / 122400.0))))))));
  const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double stirling = (z - 0.5) * std::log(z) - z + half_log_two_pi + series;
  return stirling - std::log(shift_product);
}

// Digamma psi(x) = d/dx log Gamma(x) for x > 0: recurrence
// psi(x) = psi(x + 1) - 1/x up to x >= 6, then the 8-term asymptotic series
// psi(z) ~ log z - 1/(2z) - sum_k B_2k / (2k z^2k).
inline double digamma(double x) {
  detail::require_positive(x, "digamma");
  double acc = 0.0;
  double z = x;
  while (z < detail::kPsiShift) {
    acc -= 1.0 / z;
    z += 1.0;
  }
  const double inv2 = 1.0 / (z * z);
  const double series =
      inv2 * (1.0 / 12.0 +
              inv2 * (-1.0 / 120.0 +
                      inv2 * (1.0 / 252.0 +
                              inv2 * (-1.0 / 240.0 +
                                      inv2 * (1.0 / 132.0 +
                                              inv2 * (-691.0 / 32760.0 +
                                                      inv2 * (1.0 / 12.0 +
                                                              inv2 * (-3617.0 / 8160.0))))))));
  return acc + std::log(z) - 0.5 / z - series;
}

// Trigamma psi'(x) for x > 0, by the derivative of the digamma series:
// psi'(z) ~ 1/z + 1/(2z^2) + sum_k B_2k / z^(2k+1). Relative accuracy ~1e-8 or
// better for all x > 0.
inline double trigamma(double x) {
  detail::require_positive(x, "trigamma");
  double acc = 0.0;
  double z = x;
  while (z < detail::kPsiShift) {
    acc += 1.0 / (z * z);
    z += 1.0;
  }
  const double inv = 1.0 / z;
  const double inv2 = inv * inv;
  const double series =
      inv * inv2 * (1.0 / 6.0 +
                    inv2 * (-1.0 / 30.0 +
                            inv2 * (1.0 / 42.0 +
                                    inv2 * (-1.0 / 30.0 +
                                            inv2 * (5.0 / 66.0 +
                                                    inv2 * (-691.0 / 2730.0 +
                                                            inv2 * (7.0 / 6.0)))))));
  return acc + inv + 0.5 * inv2 + series;
}

}  // namespace auxue::special
