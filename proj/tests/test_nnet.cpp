#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "auxue/diffkit/grad_check.hpp"
#include "auxue/distloss.hpp"
#include "auxue/nnet/adam.hpp"
#include "auxue/nnet/mlp.hpp"

using namespace auxue;
using ad::Tensor;
using ad::Var;
using nn::Activation;

TEST(InitMlp, Deterministic) {
  const nn::MLPSpec spec{{3, 8, 2}, {Activation::Relu, Activation::Exp}};
  const auto a = nn::init_mlp(spec, 42);
  const auto b = nn::init_mlp(spec, 42);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_TRUE(a.params[i] == b.params[i]);
  const auto c = nn::init_mlp(spec, 43);
  EXPECT_FALSE(a.params[0] == c.params[0]);
}

TEST(InitMlp, ParameterCount) {
  const nn::MLPSpec spec{{2, 3, 1}, {Activation::Relu, Activation::Identity}};
  EXPECT_EQ(nn::parameter_count(spec), 13u);
  std::size_t n = 0;
  for (const auto& t : nn::init_mlp(spec, 1).params) n += t.size();
  EXPECT_EQ(n, 13u);
}

TEST(InitMlp, CosineLayersHaveNoBias) {
  const nn::MLPSpec spec{{4, 6, 3}, {Activation::CosineRelu, Activation::Exp}};
  EXPECT_EQ(nn::parameter_count(spec), 4u * 6 + 6 * 3 + 3);
  EXPECT_EQ(nn::init_mlp(spec, 0).params.size(), 3u);
}

TEST(InitMlp, HeAndXavierBounds) {
  const nn::MLPSpec spec{{300, 300, 1}, {Activation::Relu, Activation::Identity}};
  const auto net = nn::init_mlp(spec, 9);
  const double he = std::sqrt(6.0 / 300.0);
  EXPECT_NEAR(he, 0.1414, 1e-4);
  double max_abs = 0.0;
  for (double v : net.params[0].data()) max_abs = std::max(max_abs, std::abs(v));
  EXPECT_LE(max_abs, he);
  EXPECT_GT(max_abs, 0.9 * he);  // the bound is actually used, not something smaller
  const double xavier = std::sqrt(6.0 / 301.0);
  for (double v : net.params[2].data()) EXPECT_LE(std::abs(v), xavier);
  for (double v : net.params[1].data()) EXPECT_EQ(v, 0.0);
}

TEST(InitMlp, ZeroWidthRejected) {
  EXPECT_THROW((void)nn::init_mlp({{3, 0, 1}, {Activation::Relu, Activation::Exp}}, 0), ContractError);
  EXPECT_THROW((void)nn::init_mlp({{3}, {}}, 0), ContractError);
}

TEST(Forward, IdentityLayer) {
  const nn::MLPSpec spec{{2, 2}, {Activation::Identity}};
  const std::vector<Var> p = {ad::constant(Tensor::matrix(2, 2, {1, 0, 0, 1})),
                              ad::constant(Tensor::zeros({1, 2}))};
  const Tensor x = Tensor::matrix(3, 2, {1, 2, -3, 4, 0.5, -6});
  EXPECT_TRUE(nn::forward(spec, p, ad::constant(x)).output.value() == x);
}

TEST(Forward, ExpHeadOnZeroLogit) {
  const nn::MLPSpec spec{{1, 1}, {Activation::Exp}};
  const std::vector<Var> p = {ad::constant(Tensor::matrix(1, 1, {0.7})),
                              ad::constant(Tensor::zeros({1, 1}))};
  EXPECT_DOUBLE_EQ(nn::forward(spec, p, ad::constant(Tensor::matrix(1, 1, {0.0}))).output.item(), 1.0);
}

TEST(Forward, ZeroInputFollowsBiasPath) {
  // On x = 0 every layer sees only the previous activations of the biases:
  // h1 = relu(b1), h2 = relu(W2 h1 + b2), ..., out = W5 h4 + b5.
  const nn::MLPSpec spec{{2, 3, 3, 3, 3, 1},
                         {Activation::Relu, Activation::Relu, Activation::Relu, Activation::Relu,
                          Activation::Identity}};
  auto net = nn::init_mlp(spec, 17);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t l = 1; l < net.params.size(); l += 2) {
    for (auto& v : net.params[l].data()) v = u(rng);
  }
  std::vector<double> h(3);
  for (std::size_t j = 0; j < 3; ++j) h[j] = std::max(0.0, net.params[1][j]);
  for (std::size_t l = 1; l < 4; ++l) {
    const Tensor& w = net.params[2 * l];
    const Tensor& b = net.params[2 * l + 1];
    std::vector<double> next(3);
    for (std::size_t j = 0; j < 3; ++j) {
      double z = b[j];
      for (std::size_t i = 0; i < 3; ++i) z += w.at(j, i) * h[i];
      next[j] = std::max(0.0, z);
    }
    h = std::move(next);
  }
  double out = net.params[9][0];
  for (std::size_t i = 0; i < 3; ++i) out += net.params[8].at(0, i) * h[i];
  const auto res = net.predict(Tensor::zeros({1, 2}));
  EXPECT_NEAR(res.output.item(), out, 1e-14);
  EXPECT_EQ(res.penultimate.shape(), (ad::Shape{1, 3}));
}

TEST(Forward, WidthMismatch) {
  const auto net = nn::init_mlp({{3, 4, 1}, {Activation::Relu, Activation::Identity}}, 0);
  EXPECT_THROW((void)net.predict(Tensor::zeros({2, 2})), ShapeError);
}

TEST(Cosine, Examples) {
  const Tensor x = Tensor::matrix(1, 3, {1.0, -2.0, 0.5});
  const Var w = ad::constant(Tensor::matrix(2, 3, {1.0, -2.0, 0.5, 2.0, 1.0, 0.0}));
  const auto out = nn::cosine_forward(w, ad::constant(x)).value();
  EXPECT_NEAR(out.at(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(out.at(0, 1), 0.0, 1e-15);
}

TEST(Cosine, ScaleInvariantAndBounded) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  std::vector<double> wv(5 * 4), xv(7 * 4);
  for (auto& v : wv) v = n01(rng);
  for (auto& v : xv) v = n01(rng);
  const Var w = ad::constant(Tensor::matrix(5, 4, wv));
  const Tensor x = Tensor::matrix(7, 4, xv);
  const auto base = nn::cosine_forward(w, ad::constant(x)).value();
  for (int t = 0; t < 20; ++t) {
    const double s = scale(rng);
    Tensor xs = x;
    for (auto& v : xs.data()) v *= s;
    const auto out = nn::cosine_forward(w, ad::constant(xs)).value();
    for (std::size_t i = 0; i < out.size(); ++i) {
      EXPECT_NEAR(out[i], base[i], 1e-9);
      EXPECT_LE(std::abs(out[i]), 1.0 + 1e-15);
    }
  }
  Tensor x10 = x;
  for (auto& v : x10.data()) v *= 10.0;
  const auto out10 = nn::cosine_forward(w, ad::constant(x10)).value();
  for (std::size_t i = 0; i < out10.size(); ++i) EXPECT_NEAR(out10[i], base[i], 1e-9);
}

TEST(Cosine, ZeroInputGuarded) {
  const Var w = ad::constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const auto out = nn::cosine_forward(w, ad::constant(Tensor::zeros({1, 2}))).value();
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, GradCheckEveryActivation) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n01;
  const std::vector<nn::MLPSpec> specs = {
      {{3, 5, 2}, {Activation::Relu, Activation::Exp}},
      {{3, 4, 4, 1}, {Activation::Softplus, Activation::Cosine, Activation::Identity}},
      {{2, 6, 3}, {Activation::CosineRelu, Activation::Exp}},
      {{4, 4, 2}, {Activation::Relu, Activation::Softplus}},
  };
  std::vector<double> xv(6 * 4);
  for (auto& v : xv) v = n01(rng);
  for (const auto& spec : specs) {
    const Tensor x = Tensor::matrix(6, spec.input_width(),
                                    std::vector<double>(xv.begin(), xv.begin() + 6 * spec.input_width()));
    auto net = nn::init_mlp(spec, 5);
    for (auto& t : net.params) {
      for (auto& v : t.data()) v += 0.1 * n01(rng);  // nonzero biases
    }
    auto f = [&](std::span<const Var> p) {
      return ad::mean(nn::forward(spec, p, ad::constant(x)).output);
    };
    EXPECT_LT(ad::grad_check(f, net.params), 1e-5);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<Tensor> p = {Tensor::row({1.0, -2.0})};
  nn::Adam adam({0.1});
  adam.step(p, {Tensor::zeros({1, 2})});
  EXPECT_EQ(p[0].values(), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  std::vector<Tensor> p = {Tensor::row({0.0, 0.0, 0.0})};
  nn::Adam adam({0.01});
  adam.step(p, {Tensor::row({3.0, -0.2, 50.0})});
  EXPECT_NEAR(p[0][0], -0.01, 1e-9);
  EXPECT_NEAR(p[0][1], 0.01, 1e-9);
  EXPECT_NEAR(p[0][2], -0.01, 1e-9);
}

TEST(Adam, TwoStepsOnSquareMatchHandOracle) {
  // f(x) = x^2, x0 = 1, lr = 0.1.
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = 2.0 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  std::vector<Tensor> p = {Tensor::scalar(1.0)};
  nn::Adam adam({0.1});
  for (int t = 0; t < 2; ++t) {
    const Var xv = ad::parameter(p[0]);
    const auto g = ad::backward(xv * xv);
    adam.step(p, {g[xv]});
  }
  EXPECT_NEAR(p[0].item(), x, 1e-12);
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Adam, NonFiniteGradientAborts) {
  std::vector<Tensor> p = {Tensor::row({1.0, 2.0})};
  nn::Adam adam;
  try {
    adam.step(p, {Tensor::row({1.0, std::nan("")})}, "mse, batch 3");
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("mse, batch 3"), std::string::npos);
  }
  EXPECT_EQ(p[0].values(), (std::vector<double>{1.0, 2.0}));
  EXPECT_THROW(adam.step(p, {Tensor::zeros({2, 1})}), ShapeError);
}

TEST(Minibatches, KeepsPartialBatchAndCoversAll) {
  std::mt19937_64 rng(1);
  const auto b = nn::minibatches(10, 4, rng);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[2].size(), 2u);
  std::vector<int> seen(10, 0);
  for (const auto& batch : b) {
    for (auto i : batch) ++seen[i];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Training, LossDecreasesOnSmoothRegression) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  const std::size_t n = 256;
  std::vector<double> xv(n * 2), yv(n);
  for (std::size_t i = 0; i < n; ++i) {
    xv[2 * i] = u(rng);
    xv[2 * i + 1] = u(rng);
    yv[i] = 1.5 * xv[2 * i] - 0.7 * xv[2 * i + 1] + 0.3;
  }
  const Tensor x = Tensor::matrix(n, 2, xv), y = Tensor::column(yv);
  const nn::MLPSpec spec{{2, 16, 1}, {Activation::Relu, Activation::Identity}};
  auto net = nn::init_mlp(spec, 3);
  nn::Adam adam({1e-2});
  std::vector<double> epoch_loss;
  for (int epoch = 0; epoch < 10; ++epoch) {
    double total = 0.0;
    const auto batches = nn::minibatches(n, 32, rng);
    for (const auto& rows : batches) {
      const auto p = net.as_parameters();
      const Var loss = loss::mse_loss(
          nn::forward(spec, p, ad::constant(nn::gather_rows(x, rows))).output,
          ad::constant(nn::gather_rows(y, rows)));
      const auto g = ad::backward(loss);
      std::vector<Tensor> grads;
      for (const auto& v : p) grads.push_back(g[v]);
      adam.step(net.params, grads);
      total += loss.item();
    }
    epoch_loss.push_back(total / static_cast<double>(batches.size()));
  }
  int rises = 0;
  for (std::size_t e = 1; e < epoch_loss.size(); ++e) rises += epoch_loss[e] > epoch_loss[e - 1];
  EXPECT_LE(rises, 1);
  EXPECT_LT(epoch_loss.back(), 0.2 * epoch_loss.front());
}

TEST(Activation, StringRoundTrip) {
  for (auto a : {Activation::Relu, Activation::Exp, Activation::Softplus, Activation::Cosine,
                 Activation::CosineRelu, Activation::Identity}) {
    EXPECT_EQ(nn::activation_from_string(nn::to_string(a)), a);
  }
}
