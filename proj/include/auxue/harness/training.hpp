#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "auxue/datagen.hpp"
#include "auxue/dido.hpp"
#include "auxue/distloss.hpp"
#include "auxue/harness/config.hpp"
#include "auxue/nnet/adam.hpp"
#include "auxue/nnet/mlp.hpp"

namespace auxue::harness {

using ad::Tensor;
using ad::Var;

struct TrainLog {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  double final_train_loss = 0.0;
  double final_val_loss = std::numeric_limits<double>::quiet_NaN();
};

// Minibatch Adam over a flat parameter list. `batch_loss(rows, params)`
// builds the scalar loss for one batch.
template <class BatchLoss>
TrainLog fit(std::vector<Tensor>& params, std::size_t n, const TrainSettings& settings,
             std::uint64_t seed, const std::string& what, BatchLoss&& batch_loss) {
  nn::Adam adam({settings.learning_rate});
  std::mt19937_64 rng(seed);
  TrainLog log;
  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    const auto batches = nn::minibatches(n, settings.batch, rng);
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<Var> vars;
      vars.reserve(params.size());
      for (const auto& t : params) vars.push_back(ad::parameter(t));
      const Var loss = batch_loss(std::span<const std::size_t>(batches[b]), vars);
      const std::string where =
          what + ", epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      if (!std::isfinite(loss.item())) throw DivergenceError("non-finite loss in " + where);
      ad::Gradients grads = ad::backward(loss);
      std::vector<Tensor> g;
      g.reserve(vars.size());
      for (const auto& v : vars) g.push_back(grads.release(v));
      adam.step(params, g, where);
      total += loss.item();
    }
    log.epoch_loss.push_back(total / static_cast<double>(batches.size()));
  }
  log.final_train_loss = log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back();
  return log;
}

// ---------------------------------------------------------------------------
// Main task

struct MainModel {
  nn::Mlp net;
  data::Standardizer standardizer;

  Tensor prepare(const Tensor& raw) const { return standardizer.apply(raw); }

  std::vector<double> predict(const Tensor& raw) const {
    return net.predict(prepare(raw)).output.value().values();
  }

  // Penultimate activations (graph-free, so nothing downstream can reach
  // the main parameters).
  Tensor penultimate(const Tensor& raw) const { return net.predict(prepare(raw)).penultimate.value(); }
};

struct MainTrainResult {
  MainModel model;
  TrainLog log;
};

inline MainTrainResult train_main(const ExperimentConfig& cfg, const data::RegressionDataset& train,
                                  const data::RegressionDataset* val, std::uint64_t seed) {
  cfg.validate();
  MainModel m;
  m.standardizer = cfg.standardize ? data::Standardizer::fit(train.features)
                                   : data::Standardizer::identity(train.dims());
  m.net = nn::init_mlp(cfg.main_spec(train.dims()), derive_seed(seed, 1));
  const Tensor x = m.prepare(train.features);
  const Tensor y = train.target_column();
  MainTrainResult out{m, {}};
  out.log = fit(out.model.net.params, train.rows(), cfg.main_train, derive_seed(seed, 2),
                "train_main (mse)",
                [&](std::span<const std::size_t> rows, const std::vector<Var>& params) {
                  const Var xb = ad::constant(nn::gather_rows(x, rows));
                  const Var yb = ad::constant(nn::gather_rows(y, rows));
                  return loss::mse_loss(nn::forward(out.model.net.spec, params, xb).output, yb);
                });
  if (val != nullptr && val->rows() > 0) {
    const auto pred = out.model.predict(val->features);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::pow(pred[i] - val->targets[i], 2);
    out.log.final_val_loss = s / static_cast<double>(pred.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Auxiliary uncertainty estimator

struct Auxue {
  loss::Variant variant = loss::Variant::Laplace;
  FeatureSource source = FeatureSource::Penultimate;
  nn::Mlp aleatoric;  // sigma_theta1: positive distribution parameters
  nn::Mlp epistemic;  // sigma_theta2: Dirichlet evidence
  dido::DiscretizationSpec discretization;
};

// AuxUE input stream for raw inputs: main-model penultimate features, or
// the standardized raw inputs (the AuxUE then carries its own extractor).
inline Tensor extract_features(const MainModel& main, FeatureSource source, const Tensor& raw) {
  if (raw.cols() != main.net.spec.input_width()) {
    throw ShapeError("extract_features", ad::to_string(raw.shape()),
                     "[n x " + std::to_string(main.net.spec.input_width()) + "]");
  }
  return source == FeatureSource::Penultimate ? main.penultimate(raw) : main.prepare(raw);
}

inline nn::MLPSpec aleatoric_spec(const ExperimentConfig& cfg, std::size_t feature_width) {
  using nn::Activation;
  const std::size_t p = loss::head_width(cfg.dist);
  if (cfg.features == FeatureSource::RawInputs) {
    return {{feature_width, cfg.extractor_width, p}, {Activation::Relu, Activation::Exp}};
  }
  return {{feature_width, p}, {Activation::Exp}};
}

// Cosine-similarity hidden layer (relu) of `epistemic_hidden` units, then a
// fully connected layer to K with exp.
inline nn::MLPSpec epistemic_spec(const ExperimentConfig& cfg, std::size_t feature_width) {
  using nn::Activation;
  const std::size_t h = cfg.epistemic_hidden;
  if (cfg.features == FeatureSource::RawInputs) {
    return {{feature_width, cfg.extractor_width, h, cfg.k},
            {Activation::Relu, Activation::CosineRelu, Activation::Exp}};
  }
  return {{feature_width, h, cfg.k}, {Activation::CosineRelu, Activation::Exp}};
}

struct AuxueOutputs {
  Tensor head_params;              // [n x P]
  Tensor evidence;                 // [n x K]
  std::vector<double> aleatoric;   // expected |r|
  std::vector<double> epistemic;   // K / S
};

inline AuxueOutputs predict_auxue(const Auxue& aux, const MainModel& main, const Tensor& raw) {
  const Tensor feats = extract_features(main, aux.source, raw);
  AuxueOutputs out;
  out.head_params = aux.aleatoric.predict(feats).output.value();
  out.evidence = aux.epistemic.predict(feats).output.value();
  out.aleatoric.resize(raw.rows());
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    out.aleatoric[i] = loss::expected_abs_error(aux.variant, out.head_params.row_span(i));
  }
  out.epistemic = dido::epistemic_scores(out.evidence);
  return out;
}

// Residuals y - f(x) of the main model.
inline std::vector<double> residuals(const MainModel& main, const data::RegressionDataset& ds) {
  auto pred = main.predict(ds.features);
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = ds.targets[i] - pred[i];
  return pred;
}

struct AuxueTrainResult {
  Auxue model;
  TrainLog log;
};

// Joint training of both heads on L_aleatoric + L_dido over the same feature
// stream. The discretization is fitted on this (training) split's absolute
// errors and frozen into the result.
inline AuxueTrainResult train_auxue(const ExperimentConfig& cfg, const MainModel& main,
                                    const data::RegressionDataset& train, std::uint64_t seed) {
  cfg.validate();
  const Tensor feats = extract_features(main, cfg.features, train.features);
  const auto r = residuals(main, train);
  std::vector<double> abs_err(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) abs_err[i] = std::abs(r[i]);

  AuxueTrainResult out;
  Auxue& aux = out.model;
  aux.variant = cfg.dist;
  aux.source = cfg.features;
  aux.discretization = dido::fit_discretization(abs_err, cfg.k);
  const Tensor targets = dido::one_hot(aux.discretization.classify(abs_err), cfg.k);
  const Tensor resid = Tensor::column(r);

  aux.aleatoric = nn::init_mlp(aleatoric_spec(cfg, feats.cols()), derive_seed(seed, 11));
  aux.epistemic = nn::init_mlp(epistemic_spec(cfg, feats.cols()), derive_seed(seed, 12));
  const std::size_t n_alea = aux.aleatoric.params.size();

  std::vector<Tensor> params = aux.aleatoric.params;
  params.insert(params.end(), aux.epistemic.params.begin(), aux.epistemic.params.end());

  const loss::NigOptions nig{cfg.lambda_nig, nullptr};
  out.log = fit(params, train.rows(), cfg.auxue_train, derive_seed(seed, 13),
                std::string("train_auxue (") + loss::to_string(cfg.dist) + " + dido)",
                [&](std::span<const std::size_t> rows, const std::vector<Var>& p) {
                  const Var xb = ad::constant(nn::gather_rows(feats, rows));
                  const Var rb = ad::constant(nn::gather_rows(resid, rows));
                  const Tensor tb = nn::gather_rows(targets, rows);
                  const std::span<const Var> all(p);
                  const Var head = nn::forward(aux.aleatoric.spec, all.first(n_alea), xb).output;
                  const Var evidence = nn::forward(aux.epistemic.spec, all.subspan(n_alea), xb).output;
                  return dido::combined_auxue_loss(loss::aleatoric_nll(cfg.dist, head, rb, nig),
                                                   dido::dido_loss(evidence, tb, cfg.lambda));
                });
  std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(n_alea),
            aux.aleatoric.params.begin());
  std::copy(params.begin() + static_cast<std::ptrdiff_t>(n_alea), params.end(),
            aux.epistemic.params.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Deep ensemble baseline

struct Ensemble {
  std::vector<MainModel> members;

  std::vector<double> mean_prediction(const Tensor& raw) const {
    std::vector<double> mean(raw.rows(), 0.0);
    for (const auto& m : members) {
      const auto p = m.predict(raw);
      for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i];
    }
    for (auto& v : mean) v /= static_cast<double>(members.size());
    return mean;
  }

  // Population variance of the member predictions.
  std::vector<double> variance(const Tensor& raw) const {
    std::vector<std::vector<double>> preds;
    for (const auto& m : members) preds.push_back(m.predict(raw));
    std::vector<double> var(raw.rows(), 0.0);
    const double n = static_cast<double>(members.size());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
      double mu = 0.0;
      for (const auto& p : preds) mu += p[i];
      mu /= n;
      for (const auto& p : preds) var[i] += (p[i] - mu) * (p[i] - mu);
      var[i] /= n;
    }
    return var;
  }
};

// One main-task model per seed.
inline Ensemble train_ensemble(const ExperimentConfig& cfg, const data::RegressionDataset& train,
                               std::span<const std::uint64_t> member_seeds) {
  if (member_seeds.size() < 2) throw ContractError("train_ensemble: need >= 2 members");
  Ensemble e;
  for (std::uint64_t s : member_seeds) e.members.push_back(train_main(cfg, train, nullptr, s).model);
  return e;
}

}  // namespace auxue::harness
