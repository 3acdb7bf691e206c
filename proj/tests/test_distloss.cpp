#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "auxue/diffkit/grad_check.hpp"
#include "auxue/distloss.hpp"

using namespace auxue;
using ad::Tensor;
using ad::Var;

namespace {

Var c(double v) { return ad::constant(Tensor::matrix(1, 1, {v})); }
Var col(std::vector<double> v) { return ad::constant(Tensor::column(std::move(v))); }

double gauss(double s, double r) { return loss::gaussian_nll(c(s), c(r)).item(); }
double lap(double b, double r) { return loss::laplace_nll(c(b), c(r)).item(); }
double ggau(double a, double b, double r) { return loss::ggau_nll(c(a), c(b), c(r)).item(); }
double nig(double nu, double al, double be, double r, double lambda = 0.01) {
  return loss::nig_nll(c(nu), c(al), c(be), c(r), {lambda, nullptr}).item();
}

}  // namespace

TEST(Mse, Examples) {
  EXPECT_EQ(loss::mse_loss(col({1, 2}), col({1, 2})).item(), 0.0);
  EXPECT_DOUBLE_EQ(loss::mse_loss(col({1, -1}), col({0, 0})).item(), 1.0);
  EXPECT_DOUBLE_EQ(loss::mse_loss(col({3, 4}), col({0, 0})).item(), 12.5);
  EXPECT_THROW((void)loss::mse_loss(col({1}), col({1, 2})), ShapeError);
}

TEST(Gaussian, Examples) {
  EXPECT_EQ(gauss(1.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(gauss(1.0, 2.0), 2.0);
  EXPECT_NEAR(gauss(std::numbers::e, 0.0), 0.5, 1e-15);
  EXPECT_THROW((void)gauss(0.0, 1.0), DomainError);
  EXPECT_THROW((void)gauss(-1.0, 1.0), DomainError);
}

TEST(Laplace, Examples) {
  EXPECT_NEAR(lap(0.5, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(lap(1.0, 1.0), std::log(2.0) + 1.0, 1e-15);
  EXPECT_NEAR(lap(2.0, 4.0), std::log(4.0) + 2.0, 1e-15);
  EXPECT_THROW((void)lap(0.0, 1.0), DomainError);
}

TEST(Ggau, Examples) {
  EXPECT_NEAR(ggau(1.0, 1.0, 1.0), 1.0, 1e-14);
  EXPECT_NEAR(ggau(1.0, 2.0, 0.0), -std::log(2.0) + 0.5 * std::log(std::numbers::pi), 1e-12);
  EXPECT_NEAR(ggau(1.0, 2.0, 0.0), -0.1208, 1e-4);
  EXPECT_THROW((void)ggau(1.0, 0.0, 1.0), DomainError);
  EXPECT_THROW((void)ggau(-1.0, 1.0, 1.0), DomainError);
}

TEST(Ggau, ShapeTwoIsGaussianUpToConstant) {
  // With b = 2 and a = sqrt(2) s the generalized Gaussian is N(0, s^2), so
  // the two NLLs differ by a constant across the grid.
  double offset = std::nan("");
  for (double s : {0.3, 0.8, 1.0, 2.5, 7.0}) {
    for (double r : {-3.0, -0.5, 0.0, 0.1, 1.7, 4.0}) {
      const double d = ggau(std::sqrt(2.0) * s, 2.0, r) - gauss(s * s, r);
      if (std::isnan(offset)) offset = d;
      EXPECT_NEAR(d, offset, 1e-12) << s << ' ' << r;
    }
  }
  // lgamma(1/2) - log sqrt(2) = 1/2 log(pi / 2)
  EXPECT_NEAR(offset, 0.5 * std::log(std::numbers::pi / 2.0), 1e-12);
}

TEST(Nig, Examples) {
  EXPECT_NEAR(nig(1.0, 1.0, 0.5, 0.0), 1.5 * std::log(2.0), 1e-3);
  // Exact symbolic value: 1/2 log pi - log 2 + 3/2 log 2 - lgamma(3/2).
  EXPECT_NEAR(nig(1.0, 1.0, 0.5, 0.0),
              0.5 * std::log(std::numbers::pi) + 0.5 * std::log(2.0) - std::lgamma(1.5), 1e-12);
  // L2 vanishes at r = 0, so lambda is irrelevant there.
  EXPECT_EQ(nig(2.0, 3.0, 0.7, 0.0, 0.0), nig(2.0, 3.0, 0.7, 0.0, 5.0));
  EXPECT_THROW((void)nig(0.0, 1.0, 1.0, 0.0), DomainError);
  EXPECT_THROW((void)nig(1.0, -1.0, 1.0, 0.0), DomainError);
  EXPECT_THROW((void)nig(1.0, 1.0, 0.0, 0.0), DomainError);
}

TEST(Nig, LambdaZeroIsL1) {
  const double nu = 1.3, al = 2.1, be = 0.4, r = 0.9;
  const double om = 2 * be * (1 + nu);
  const double l1 = 0.5 * std::log(std::numbers::pi / nu) - al * std::log(om) +
                    (al + 0.5) * std::log(r * r * nu + om) + std::lgamma(al) - std::lgamma(al + 0.5);
  EXPECT_NEAR(nig(nu, al, be, r, 0.0), l1, 1e-12);
  EXPECT_NEAR(nig(nu, al, be, r, 0.01), l1 + 0.01 * r * (2 * nu + al), 1e-12);
}

TEST(Nig, WarnsOnSmallAlpha) {
  std::ostringstream log;
  (void)loss::nig_nll(col({1.0, 1.0}), col({0.4, 2.0}), col({1.0, 1.0}), col({0.1, 0.2}),
                      {0.01, &log});
  EXPECT_NE(log.str().find("1 sample(s)"), std::string::npos) << log.str();
}

TEST(Losses, DependOnlyOnResidual) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int t = 0; t < 20; ++t) {
    const double y = u(rng), f = u(rng), shift = u(rng);
    const Var a = col({y}) - col({f});
    const Var b = col({y + shift}) - col({f + shift});
    EXPECT_NEAR(loss::laplace_nll(c(0.8), a).item(), loss::laplace_nll(c(0.8), b).item(), 1e-12);
    EXPECT_NEAR(loss::gaussian_nll(c(0.8), a).item(), loss::gaussian_nll(c(0.8), b).item(), 1e-12);
    EXPECT_NEAR(ggau(1.1, 1.7, a.item()), ggau(1.1, 1.7, b.item()), 1e-12);
    EXPECT_NEAR(nig(1.1, 1.7, 0.6, a.item()), nig(1.1, 1.7, 0.6, b.item()), 1e-12);
  }
}

TEST(Losses, ScaleMinimizers) {
  for (double r : {0.3, 1.0, 2.5}) {
    const double s = r * r, b = std::abs(r);
    for (double f : {0.9, 0.99, 1.01, 1.1}) {
      EXPECT_GT(gauss(s * f, r), gauss(s, r));
      EXPECT_GT(lap(b * f, r), lap(b, r));
    }
    // First-order conditions.
    const Var sv = ad::parameter(Tensor::matrix(1, 1, {s}));
    EXPECT_NEAR(ad::backward(loss::gaussian_nll(sv, c(r)))[sv].item(), 0.0, 1e-12);
    const Var bv = ad::parameter(Tensor::matrix(1, 1, {b}));
    EXPECT_NEAR(ad::backward(loss::laplace_nll(bv, c(r)))[bv].item(), 0.0, 1e-12);
  }
}

TEST(Losses, BatchReductionIsMean) {
  const double two = loss::laplace_nll(col({1.0, 2.0}), col({0.5, -3.0})).item();
  EXPECT_NEAR(two, 0.5 * (lap(1.0, 0.5) + lap(2.0, -3.0)), 1e-15);
}

TEST(Losses, GradCheckAtRandomPoints) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> pos(0.3, 3.0), mag(0.1, 3.0);
  std::bernoulli_distribution sign(0.5);
  auto res = [&] {
    std::vector<double> v(4);
    for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
    return Tensor::column(v);
  };
  auto pcol = [&] {
    std::vector<double> v(4);
    for (auto& x : v) x = pos(rng);
    return Tensor::column(v);
  };
  double worst[5] = {0, 0, 0, 0, 0};
  for (int t = 0; t < 50; ++t) {
    const Tensor r = res();
    const Var rc = ad::constant(r);
    worst[0] = std::max(worst[0], ad::grad_check([&](auto p) { return loss::mse_loss(p[0], p[1]); },
                                                 {res(), res()}));
    worst[1] = std::max(worst[1], ad::grad_check([&](auto p) { return loss::gaussian_nll(p[0], rc); },
                                                 {pcol()}));
    worst[2] = std::max(worst[2], ad::grad_check([&](auto p) { return loss::laplace_nll(p[0], rc); },
                                                 {pcol()}));
    worst[3] = std::max(worst[3], ad::grad_check(
                                      [&](auto p) { return loss::ggau_nll(p[0], p[1], rc); },
                                      {pcol(), pcol()}));
    worst[4] = std::max(worst[4], ad::grad_check(
                                      [&](auto p) { return loss::nig_nll(p[0], p[1], p[2], rc); },
                                      {pcol(), pcol(), pcol()}));
  }
  for (double w : worst) EXPECT_LT(w, 1e-4);
}

TEST(AleatoricNll, DispatchesOnHeadColumns) {
  const Var r = col({0.5, -1.0});
  const Var p2 = ad::constant(Tensor::matrix(2, 2, {1.2, 1.5, 0.7, 2.0}));
  EXPECT_NEAR(loss::aleatoric_nll(loss::Variant::Ggau, p2, r).item(),
              0.5 * (ggau(1.2, 1.5, 0.5) + ggau(0.7, 2.0, -1.0)), 1e-14);
  const Var p3 = ad::constant(Tensor::matrix(2, 3, {1, 2, 0.5, 2, 3, 1}));
  EXPECT_NEAR(loss::aleatoric_nll(loss::Variant::Nig, p3, r).item(),
              0.5 * (nig(1, 2, 0.5, 0.5) + nig(2, 3, 1, -1.0)), 1e-14);
  EXPECT_EQ(loss::head_width(loss::Variant::Laplace), 1u);
  EXPECT_EQ(loss::head_width(loss::Variant::Nig), 3u);
}

TEST(ExpectedAbsError, MatchesDistributionMoments) {
  const std::vector<double> lap_p = {0.8};
  EXPECT_DOUBLE_EQ(loss::expected_abs_error(loss::Variant::Laplace, lap_p), 0.8);
  const std::vector<double> g = {4.0};
  EXPECT_NEAR(loss::expected_abs_error(loss::Variant::Gaussian, g), 2.0 * std::sqrt(2.0 / std::numbers::pi),
              1e-14);
  // Generalized Gaussian with shape 1 is Laplace with scale a.
  const std::vector<double> gg = {1.3, 1.0};
  EXPECT_NEAR(loss::expected_abs_error(loss::Variant::Ggau, gg), 1.3, 1e-12);
}

TEST(Variant, StringRoundTrip) {
  for (auto v : {loss::Variant::Gaussian, loss::Variant::Laplace, loss::Variant::Ggau, loss::Variant::Nig}) {
    EXPECT_EQ(loss::variant_from_string(loss::to_string(v)), v);
  }
  EXPECT_THROW((void)loss::variant_from_string("cauchy"), ContractError);
}
