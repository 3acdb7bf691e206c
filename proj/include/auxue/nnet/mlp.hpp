#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "auxue/diffkit/graph.hpp"
#include "auxue/error.hpp"

namespace auxue::nn {

using ad::Tensor;
using ad::Var;

// Per-layer activation. `Cosine` marks a cosine-similarity layer (no bias,
// no further nonlinearity) and `CosineRelu` the same layer followed by a
// relu; every other tag is a fully connected layer followed by that
// activation.
enum class Activation { Relu, Exp, Softplus, Cosine, CosineRelu, Identity };

inline bool is_cosine(Activation a) {
  return a == Activation::Cosine || a == Activation::CosineRelu;
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Exp: return "exp";
    case Activation::Softplus: return "softplus";
    case Activation::Cosine: return "cosine";
    case Activation::CosineRelu: return "cosine_relu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "exp") return Activation::Exp;
  if (s == "softplus") return Activation::Softplus;
  if (s == "cosine") return Activation::Cosine;
  if (s == "cosine_relu") return Activation::CosineRelu;
  if (s == "identity") return Activation::Identity;
  throw FormatError("unknown activation '" + s + "'");
}

// widths = [input, hidden..., output]; activations[i] applies to layer i
// (mapping widths[i] -> widths[i+1]).
struct MLPSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;

  std::size_t layers() const { return activations.size(); }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }

  void validate() const {
    if (activations.empty() || widths.size() != activations.size() + 1) {
      throw ContractError("MLPSpec: need >= 1 layer and widths.size() == layers + 1");
    }
    for (std::size_t w : widths) {
      if (w == 0) throw ContractError("MLPSpec: zero-width layer");
    }
  }

  bool operator==(const MLPSpec&) const = default;
};

// Number of parameter tensors and scalars implied by a spec.
inline std::size_t parameter_count(const MLPSpec& spec) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    n += spec.widths[l] * spec.widths[l + 1];
    if (!is_cosine(spec.activations[l])) n += spec.widths[l + 1];
  }
  return n;
}

constexpr double kCosineEps = 1e-8;

// out[i, j] = (w_j . x_i) / (max(|w_j|, eps) * max(|x_i|, eps)).
// `weight` is [out x in], `x` is [n x in].
inline Var cosine_forward(const Var& weight, const Var& x) {
  const Var x_scale = ad::div(ad::constant(1.0), ad::clamp_min(ad::row_norm(x), kCosineEps));
  const Var w_scale =
      ad::div(ad::constant(1.0), ad::clamp_min(ad::row_norm(weight), kCosineEps));
  const Var x_unit = ad::mul_col_broadcast(x, x_scale);
  const Var w_unit = ad::mul_col_broadcast(weight, w_scale);
  return ad::matmul_nt(x_unit, w_unit);
}

inline Var activate(Activation a, const Var& z) {
  switch (a) {
    case Activation::Relu:
    case Activation::CosineRelu: return ad::relu(z);
    case Activation::Exp: return ad::exp(z);
    case Activation::Softplus: return ad::softplus(z);
    case Activation::Cosine:
    case Activation::Identity: return z;
  }
  return z;
}

struct ForwardResult {
  Var output;
  // Activations feeding the last layer (the input itself for 1-layer nets).
  Var penultimate;
};

// Runs the network on x [n x in]. `params` holds, per layer, the weight
// [out x in] followed by the bias [1 x out] (no bias for cosine layers).
inline ForwardResult forward(const MLPSpec& spec, std::span<const Var> params, const Var& x) {
  if (x.value().rank() != 2 || x.value().cols() != spec.input_width()) {
    throw ShapeError("mlp forward", ad::to_string(x.shape()),
                     "[n x " + std::to_string(spec.input_width()) + "]");
  }
  std::size_t p = 0;
  Var h = x;
  Var penultimate = x;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    if (l + 1 == spec.layers()) penultimate = h;
    const Activation act = spec.activations[l];
    if (is_cosine(act)) {
      h = activate(act, cosine_forward(params[p++], h));
    } else {
      const Var& w = params[p++];
      const Var& b = params[p++];
      h = activate(act, ad::add_row_broadcast(ad::matmul_nt(h, w), b));
    }
  }
  return {h, penultimate};
}

// A network: its spec plus the parameter tensors in forward() order.
struct Mlp {
  MLPSpec spec;
  std::vector<Tensor> params;

  std::vector<Var> as_parameters() const {
    std::vector<Var> out;
    out.reserve(params.size());
    for (const auto& t : params) out.push_back(ad::parameter(t));
    return out;
  }

  std::vector<Var> as_constants() const {
    std::vector<Var> out;
    out.reserve(params.size());
    for (const auto& t : params) out.push_back(ad::constant(t));
    return out;
  }

  // Graph-free inference.
  ForwardResult predict(const Tensor& x) const {
    const auto cs = as_constants();
    return forward(spec, cs, ad::constant(x));
  }
};

// He-uniform (bound sqrt(6 / fan_in)) for relu layers, Xavier-uniform
// (bound sqrt(6 / (fan_in + fan_out))) otherwise; zero biases.
inline double init_bound(Activation act, std::size_t fan_in, std::size_t fan_out) {
  if (act == Activation::Relu) return std::sqrt(6.0 / static_cast<double>(fan_in));
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline Mlp init_mlp(const MLPSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Mlp net{spec, {}};
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    const double bound = init_bound(spec.activations[l], in, out);
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out);
    for (auto& v : w) v = dist(rng);
    net.params.push_back(Tensor::matrix(out, in, std::move(w)));
    if (!is_cosine(spec.activations[l])) {
      net.params.push_back(Tensor::zeros({1, out}));
    }
  }
  return net;
}

// Row subset of a matrix.
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t m = x.cols();
  std::vector<double> out;
  out.reserve(rows.size() * m);
  for (std::size_t r : rows) {
    auto row = x.row_span(r);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::matrix(rows.size(), m, std::move(out));
}

// Seeded per-epoch shuffle split into batches; the last partial batch is kept.
inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch,
                                                         std::mt19937_64& rng) {
  if (batch == 0) throw ContractError("minibatches: batch size must be positive");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch)));
  }
  return out;
}

}  // namespace auxue::nn
