#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "auxue/distloss.hpp"
#include "auxue/error.hpp"
#include "auxue/nnet/mlp.hpp"

namespace auxue::harness {

using nlohmann::json;

enum class Experiment { ToyA, ToyB, Tabular };

inline const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::ToyA: return "toy-a";
    case Experiment::ToyB: return "toy-b";
    case Experiment::Tabular: return "tabular";
  }
  return "?";
}

inline Experiment experiment_from_string(const std::string& s) {
  if (s == "toy-a" || s == "toy_a") return Experiment::ToyA;
  if (s == "toy-b" || s == "toy_b") return Experiment::ToyB;
  if (s == "tabular") return Experiment::Tabular;
  throw ContractError("unknown experiment '" + s + "' (expected toy-a|toy-b|tabular)");
}

struct TrainSettings {
  double learning_rate = 1e-3;
  std::size_t epochs = 1;
  std::size_t batch = 64;
};

// Where the AuxUE reads its inputs from.
enum class FeatureSource {
  Penultimate,  // frozen main-model penultimate activations
  RawInputs,    // standardized raw inputs through the AuxUE's own extractor
};

inline const char* to_string(FeatureSource f) {
  return f == FeatureSource::Penultimate ? "penultimate" : "raw";
}

inline FeatureSource feature_source_from_string(const std::string& s) {
  if (s == "penultimate") return FeatureSource::Penultimate;
  if (s == "raw") return FeatureSource::RawInputs;
  throw FormatError("unknown feature source '" + s + "'");
}

struct ExperimentConfig {
  Experiment experiment = Experiment::ToyA;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  std::vector<std::size_t> main_hidden;
  TrainSettings main_train;
  TrainSettings auxue_train;

  std::size_t k = 5;
  double lambda = 1e-3;
  loss::Variant dist = loss::Variant::Laplace;
  double lambda_nig = 0.01;
  std::size_t ensemble_size = 3;

  FeatureSource features = FeatureSource::Penultimate;
  std::size_t extractor_width = 16;  // RawInputs only
  std::size_t epistemic_hidden = 300;

  std::size_t toy_n = 1000;
  std::size_t toy_grid = 600;
  bool standardize = false;

  std::string data_path;
  std::string target_column = "quality";
  char sep = ',';
  std::string out_dir = "out";

  // Toy: 4 x 300 relu main model, lr 1e-3 / 200 epochs (main) and
  // lr 5e-3 / 100 epochs (AuxUE), batch 64, lambda 1e-3, K 5.
  // Tabular: 16-32-16 relu main model, lr 1e-3 / 150 epochs (main) and
  // lr 1e-3 / 20 epochs (AuxUE), batch 64, lambda 1e-4, K 5.
  static ExperimentConfig preset(Experiment e) {
    ExperimentConfig c;
    c.experiment = e;
    if (e == Experiment::Tabular) {
      c.main_hidden = {16, 32, 16};
      c.main_train = {1e-3, 150, 64};
      c.auxue_train = {1e-3, 20, 64};
      c.lambda = 1e-4;
      c.features = FeatureSource::RawInputs;
      c.standardize = false;
      c.data_path = "data/winequality-red.csv";
    } else {
      c.main_hidden = {300, 300, 300, 300};
      c.main_train = {1e-3, 200, 64};
      c.auxue_train = {5e-3, 100, 64};
      c.lambda = 1e-3;
      c.features = FeatureSource::Penultimate;
      c.standardize = false;
    }
    return c;
  }

  void validate() const {
    if (k < 2) throw ContractError("config: K must be >= 2");
    if (lambda < 0.0) throw ContractError("config: lambda must be >= 0");
    if (seeds.empty()) throw ContractError("config: at least one seed required");
    for (const auto* t : {&main_train, &auxue_train}) {
      if (t->epochs == 0 || t->batch == 0 || !(t->learning_rate > 0.0)) {
        throw ContractError("config: epochs, batch and learning rate must be positive");
      }
    }
    if (ensemble_size < 2) throw ContractError("config: ensemble size must be >= 2");
    if (main_hidden.empty()) throw ContractError("config: main model needs a hidden layer");
  }

  nn::MLPSpec main_spec(std::size_t input_width) const {
    nn::MLPSpec s;
    s.widths.push_back(input_width);
    for (std::size_t w : main_hidden) {
      s.widths.push_back(w);
      s.activations.push_back(nn::Activation::Relu);
    }
    s.widths.push_back(1);
    s.activations.push_back(nn::Activation::Identity);
    return s;
  }

  json to_json() const {
    json j;
    j["experiment"] = to_string(experiment);
    j["seeds"] = seeds;
    j["main_hidden"] = main_hidden;
    j["main_train"] = {{"lr", main_train.learning_rate},
                       {"epochs", main_train.epochs},
                       {"batch", main_train.batch}};
    j["auxue_train"] = {{"lr", auxue_train.learning_rate},
                        {"epochs", auxue_train.epochs},
                        {"batch", auxue_train.batch}};
    j["k"] = k;
    j["lambda"] = lambda;
    j["dist"] = loss::to_string(dist);
    j["lambda_nig"] = lambda_nig;
    j["ensemble_size"] = ensemble_size;
    j["features"] = to_string(features);
    j["extractor_width"] = extractor_width;
    j["epistemic_hidden"] = epistemic_hidden;
    j["toy_n"] = toy_n;
    j["toy_grid"] = toy_grid;
    j["standardize"] = standardize;
    j["data_path"] = data_path;
    j["target_column"] = target_column;
    j["sep"] = std::string(1, sep);
    return j;
  }

  // FNV-1a of the canonical JSON (keys sorted, output directory excluded).
  std::string hash() const {
    const std::string text = to_json().dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : text) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = digits[h & 0xF];
      h >>= 4;
    }
    return out;
  }
};

// Stream-specific seed derived from a run seed.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t stream) {
  std::uint64_t z = run_seed * 0x9E3779B97F4A7C15ull + stream * 0xBF58476D1CE4E5B9ull + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace auxue::harness
