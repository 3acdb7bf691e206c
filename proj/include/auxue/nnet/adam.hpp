#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "auxue/diffkit/tensor.hpp"
#include "auxue/error.hpp"

namespace auxue::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. Moments are allocated lazily to mirror the parameter
// shapes seen on the first step.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::size_t steps() const { return step_; }

  // `context` names the loss and batch for the divergence diagnostic.
  void step(std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads,
            std::string_view context = {}) {
    if (grads.size() != params.size()) {
      throw ContractError("Adam::step: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i].shape() != params[i].shape()) {
        throw ShapeError("Adam::step", ad::to_string(params[i].shape()),
                         ad::to_string(grads[i].shape()));
      }
      if (!grads[i].all_finite()) {
        throw DivergenceError("non-finite gradient for parameter " + std::to_string(i) +
                              (context.empty() ? std::string() : " (" + std::string(context) + ")"));
      }
    }
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.push_back(ad::Tensor::zeros(p.shape()));
        second_.push_back(ad::Tensor::zeros(p.shape()));
      }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double lr = config_.learning_rate, eps = config_.epsilon;
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* __restrict p = params[i].data().data();
      const double* __restrict g = grads[i].data().data();
      double* __restrict m = first_[i].data().data();
      double* __restrict v = second_[i].data().data();
      const std::size_t n = params[i].size();
      for (std::size_t k = 0; k < n; ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
      }
    }
  }

 private:
  AdamConfig config_;
  std::vector<ad::Tensor> first_;
  std::vector<ad::Tensor> second_;
  std::size_t step_ = 0;
};

}  // namespace auxue::nn
