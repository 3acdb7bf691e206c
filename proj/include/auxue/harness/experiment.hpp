#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "auxue/harness/checkpoint.hpp"
#include "auxue/metrics.hpp"

namespace auxue::harness {

// Flat metric name -> value. std::map keeps keys sorted, which fixes the
// order of every serialized form.
using Metrics = std::map<std::string, double>;

// Runs `fn`, re-throwing any failure tagged with the stage name.
template <class Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation pieces (shared with the CLI `eval` subcommand)

inline Metrics evaluate_main(const MainModel& main, const data::RegressionDataset& test) {
  const auto r = residuals(main, test);
  double se = 0.0, ae = 0.0;
  for (double v : r) {
    se += v * v;
    ae += std::abs(v);
  }
  const double n = static_cast<double>(r.size());
  return {{"main.test_mse", se / n}, {"main.test_mae", ae / n}, {"main.test_rmse", std::sqrt(se / n)}};
}

inline Metrics evaluate_auxue_id(const Auxue& aux, const MainModel& main,
                                 const data::RegressionDataset& test) {
  const auto r = residuals(main, test);
  const auto out = predict_auxue(aux, main, test.features);
  const auto rep = metrics::evaluate_aleatoric(r, test.targets, out.aleatoric);
  double strength = 0.0;
  for (double u : out.epistemic) strength += static_cast<double>(aux.discretization.k) / u;
  return {{"aleatoric.ause_rel", rep.ause_rel},
          {"aleatoric.ause_rmse", rep.ause_rmse},
          {"aleatoric.aurg_rel", rep.aurg_rel},
          {"aleatoric.aurg_rmse", rep.aurg_rmse},
          {"aleatoric.uce", rep.uce},
          {"epistemic.mean_strength_id", strength / static_cast<double>(out.epistemic.size())}};
}

// Per-method uncertainty scores for one input set.
struct ScoreSet {
  std::vector<double> dido;
  std::vector<double> aleatoric;
  std::vector<double> deep_ensemble;
};

inline ScoreSet score_inputs(const Auxue& aux, const MainModel& main, const Ensemble* ensemble,
                             const Tensor& x) {
  const auto out = predict_auxue(aux, main, x);
  ScoreSet s{out.epistemic, out.aleatoric, {}};
  if (ensemble != nullptr) s.deep_ensemble = ensemble->variance(x);
  return s;
}

struct OodSet {
  std::string name;
  data::RegressionDataset data;
};

// ID test rows are negatives (label 0), OOD rows positives (label 1).
inline Metrics evaluate_ood(const ScoreSet& id, const ScoreSet& ood, const std::string& set_name) {
  Metrics m;
  auto add = [&](const std::string& method, const std::vector<double>& a,
                 const std::vector<double>& b) {
    if (a.empty()) return;
    std::vector<double> scores(a);
    scores.insert(scores.end(), b.begin(), b.end());
    std::vector<int> labels(a.size(), 0);
    labels.resize(a.size() + b.size(), 1);
    const std::string key = "ood." + set_name + "." + method;
    m[key + ".auc"] = metrics::roc_auc(scores, labels);
    m[key + ".aupr"] = metrics::pr_aupr(scores, labels);
  };
  add("dido", id.dido, ood.dido);
  add("aleatoric", id.aleatoric, ood.aleatoric);
  add("deep_ensemble", id.deep_ensemble, ood.deep_ensemble);
  return m;
}

// ---------------------------------------------------------------------------
// Reports

struct SeedResult {
  std::uint64_t seed = 0;
  Metrics metrics;
  double seconds = 0.0;
};

struct AcceptanceCheck {
  std::string name;
  std::string rule;
  double value = 0.0;
  bool pass = false;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<SeedResult> per_seed;
  Metrics mean;
  std::vector<AcceptanceCheck> acceptance;
  double total_seconds = 0.0;
  std::string dump_name;  // grid.csv (toy) or scores.csv (tabular)
  std::string dump_csv;

  json to_json() const {
    json j;
    j["schema"] = "auxue.run_report/1";
    j["experiment"] = to_string(config.experiment);
    j["config"] = config.to_json();
    j["config_hash"] = config.hash();
    j["seeds"] = config.seeds;
    j["per_seed"] = json::array();
    for (const auto& s : per_seed) {
      j["per_seed"].push_back({{"seed", s.seed}, {"metrics", s.metrics}});
    }
    j["mean"] = mean;
    j["acceptance"] = json::array();
    for (const auto& a : acceptance) {
      j["acceptance"].push_back(
          {{"name", a.name}, {"rule", a.rule}, {"value", a.value}, {"pass", a.pass}});
    }
    json timing = {{"total_seconds", total_seconds}};
    for (const auto& s : per_seed) timing["seed_" + std::to_string(s.seed)] = s.seconds;
    j["timing"] = timing;
    return j;
  }

  // metric,seed_<s>...,mean with %.10g values. Timing is left out so the
  // file is byte-stable across invocations.
  std::string headline_csv() const {
    std::ostringstream out;
    out << "metric";
    for (const auto& s : per_seed) out << ",seed_" << s.seed;
    out << ",mean\n";
    char buf[64];
    auto fmt = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.10g", v);
      return std::string(buf);
    };
    for (const auto& [key, value] : mean) {
      out << key;
      for (const auto& s : per_seed) out << ',' << fmt(s.metrics.at(key));
      out << ',' << fmt(value) << '\n';
    }
    return out.str();
  }
};

// Every metric must be finite in every seed.
inline void check_finite(const RunReport& r) {
  for (const auto& s : r.per_seed) {
    for (const auto& [k, v] : s.metrics) {
      if (!std::isfinite(v)) {
        throw StageError("report", "metric '" + k + "' is not finite for seed " +
                                       std::to_string(s.seed));
      }
    }
  }
}

inline void write_report(const RunReport& r, const std::filesystem::path& dir) {
  write_atomic(dir / "report.json", r.to_json().dump(2) + "\n");
  write_atomic(dir / "headline.csv", r.headline_csv());
  if (!r.dump_name.empty()) write_atomic(dir / r.dump_name, r.dump_csv);
}

// ---------------------------------------------------------------------------
// Experiment drivers

using Progress = std::function<void(const std::string&)>;

namespace detail {

inline double region_mean(const std::vector<double>& xs, const std::vector<double>& v,
                          const std::function<bool(double)>& in) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (in(xs[i])) {
      s += v[i];
      ++n;
    }
  }
  if (n == 0) throw ContractError("region_mean: empty region");
  return s / static_cast<double>(n);
}

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct SeedOutput {
  Metrics metrics;
  std::string dump_rows;
};

inline SeedOutput run_toy_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                               const Progress& progress) {
  const auto variant = cfg.experiment == Experiment::ToyA ? data::ToyVariant::A : data::ToyVariant::B;
  const auto train = stage("gen-data", [&] { return data::gen_toy(variant, cfg.toy_n, derive_seed(seed, 21)); });
  const auto val = stage("gen-data", [&] {
    return data::gen_toy(variant, std::max<std::size_t>(10, cfg.toy_n / 5), derive_seed(seed, 22));
  });
  const auto test = stage("gen-data", [&] { return data::gen_toy(variant, cfg.toy_n, derive_seed(seed, 23)); });

  if (progress) progress("seed " + std::to_string(seed) + ": train-main");
  const auto main = stage("train-main", [&] { return train_main(cfg, train, &val, seed); });
  if (progress) progress("seed " + std::to_string(seed) + ": train-auxue");
  const auto aux = stage("train-auxue", [&] { return train_auxue(cfg, main.model, train, seed); });

  return stage("eval", [&] {
    SeedOutput out;
    out.metrics = evaluate_main(main.model, test);
    out.metrics["main.train_loss"] = main.log.final_train_loss;
    out.metrics["main.val_mse"] = main.log.final_val_loss;
    out.metrics.merge(evaluate_auxue_id(aux.model, main.model, test));

    const std::size_t g = cfg.toy_grid;
    std::vector<double> xs(g);
    for (std::size_t i = 0; i < g; ++i) {
      xs[i] = -6.0 + 12.0 * static_cast<double>(i) / static_cast<double>(g - 1);
    }
    const Tensor grid = Tensor::matrix(g, 1, xs);
    const auto pred = main.model.predict(grid);
    const auto u = predict_auxue(aux.model, main.model, grid);
    auto epi = [&](double lo, double hi) {
      return region_mean(xs, u.epistemic, [=](double x) { return x >= lo && x <= hi; });
    };
    auto alea = [&](double lo, double hi) {
      return region_mean(xs, u.aleatoric, [=](double x) { return x >= lo && x <= hi; });
    };
    if (cfg.experiment == Experiment::ToyA) {
      out.metrics["region.epistemic_id"] = epi(-2.5, 2.5);
      out.metrics["region.epistemic_ood"] = region_mean(
          xs, u.epistemic, [](double x) { return std::abs(x) >= 4.0 && std::abs(x) <= 6.0; });
      out.metrics["region.aleatoric_neg"] = alea(-3.0, 0.0);
      out.metrics["region.aleatoric_pos"] = alea(0.0, 3.0);
    } else {
      out.metrics["region.epistemic_between"] = epi(0.0, 2.0);
      out.metrics["region.epistemic_left"] = epi(-3.0, -1.0);
      out.metrics["region.epistemic_right"] = epi(3.0, 5.0);
      out.metrics["region.aleatoric_left"] = alea(-3.0, -1.0);
      out.metrics["region.aleatoric_right"] = alea(3.0, 5.0);
    }
    std::ostringstream rows;
    for (std::size_t i = 0; i < g; ++i) {
      rows << seed << ',' << fmt17(xs[i]) << ',' << fmt17(pred[i]) << ',' << fmt17(u.aleatoric[i])
           << ',' << fmt17(u.epistemic[i]) << '\n';
    }
    out.dump_rows = rows.str();
    return out;
  });
}

inline std::vector<OodSet> make_ood_sets(const data::RegressionDataset& test, std::uint64_t seed) {
  return {{"negate_all", data::perturb(test, {data::Perturbation::NegateAll, 0})},
          {"shuffle_features",
           data::perturb(test, {data::Perturbation::ShuffleFeatures, derive_seed(seed, 31)})}};
}

inline SeedOutput run_tabular_seed(const ExperimentConfig& cfg, const data::RegressionDataset& all,
                                   std::uint64_t seed, const Progress& progress) {
  const auto tagged = stage("split", [&] { return data::split(all, {}, derive_seed(seed, 30)); });
  const auto train = data::subset(tagged, data::Split::Train);
  const auto val = data::subset(tagged, data::Split::Val);
  const auto test = data::subset(tagged, data::Split::Test);

  if (progress) progress("seed " + std::to_string(seed) + ": train-main");
  const auto main = stage("train-main", [&] { return train_main(cfg, train, &val, seed); });
  if (progress) progress("seed " + std::to_string(seed) + ": train-auxue");
  const auto aux = stage("train-auxue", [&] { return train_auxue(cfg, main.model, train, seed); });
  if (progress) progress("seed " + std::to_string(seed) + ": train-ensemble");
  const auto ens = stage("train-ensemble", [&] {
    Ensemble e;
    e.members.push_back(main.model);
    for (std::size_t m = 1; m < cfg.ensemble_size; ++m) {
      e.members.push_back(train_main(cfg, train, nullptr, derive_seed(seed, 100 + m)).model);
    }
    return e;
  });

  return stage("eval", [&] {
    SeedOutput out;
    out.metrics = evaluate_main(main.model, test);
    out.metrics["main.train_loss"] = main.log.final_train_loss;
    out.metrics["main.val_mse"] = main.log.final_val_loss;
    out.metrics.merge(evaluate_auxue_id(aux.model, main.model, test));

    std::ostringstream rows;
    auto dump = [&](const std::string& set, int label, const ScoreSet& s) {
      for (std::size_t i = 0; i < s.dido.size(); ++i) {
        rows << seed << ',' << set << ',' << label << ',' << fmt17(s.dido[i]) << ','
             << fmt17(s.aleatoric[i]) << ',' << fmt17(s.deep_ensemble[i]) << '\n';
      }
    };
    const ScoreSet id = score_inputs(aux.model, main.model, &ens, test.features);
    dump("id_test", 0, id);
    const auto sets = make_ood_sets(test, seed);
    for (const auto& set : sets) {
      const ScoreSet ood = score_inputs(aux.model, main.model, &ens, set.data.features);
      dump(set.name, 1, ood);
      out.metrics.merge(evaluate_ood(id, ood, set.name));
    }
    for (const char* method : {"dido", "aleatoric", "deep_ensemble"}) {
      for (const char* m : {"auc", "aupr"}) {
        double s = 0.0;
        for (const auto& set : sets) s += out.metrics.at("ood." + set.name + "." + method + "." + m);
        out.metrics[std::string("ood.mean.") + method + "." + m] = s / static_cast<double>(sets.size());
      }
    }
    out.dump_rows = rows.str();
    return out;
  });
}

inline void add_acceptance(RunReport& r) {
  const Metrics& m = r.mean;
  auto check = [&](std::string name, std::string rule, double value, bool pass) {
    r.acceptance.push_back({std::move(name), std::move(rule), value, pass});
  };
  switch (r.config.experiment) {
    case Experiment::Tabular: {
      const double auc = m.at("ood.mean.dido.auc");
      const double aupr = m.at("ood.mean.dido.aupr");
      const double mse = m.at("main.test_mse");
      const double gap = auc - m.at("ood.mean.deep_ensemble.auc");
      check("dido_auc", ">= 0.85", auc, auc >= 0.85);
      check("dido_aupr", ">= 0.75", aupr, aupr >= 0.75);
      check("main_test_mse", "in [0.55, 0.75]", mse, mse >= 0.55 && mse <= 0.75);
      check("dido_minus_deep_ensemble_auc", ">= 0.2", gap, gap >= 0.2);
      check("runtime_seconds", "<= 300", r.total_seconds, r.total_seconds <= 300.0);
      break;
    }
    case Experiment::ToyA: {
      const double epi = m.at("region.epistemic_ood") / m.at("region.epistemic_id");
      const double alea = m.at("region.aleatoric_neg") / m.at("region.aleatoric_pos");
      check("epistemic_ood_over_id", ">= 2", epi, epi >= 2.0);
      check("aleatoric_neg_over_pos", ">= 1.25", alea, alea >= 1.25);
      check("runtime_seconds", "<= 120", r.total_seconds, r.total_seconds <= 120.0);
      break;
    }
    case Experiment::ToyB: {
      const double mid = m.at("region.epistemic_between");
      const double left = m.at("region.epistemic_left");
      const double right = m.at("region.epistemic_right");
      check("epistemic_between_minus_left", "> 0", mid - left, mid > left);
      check("epistemic_between_minus_right", "> 0", mid - right, mid > right);
      break;
    }
  }
}

}  // namespace detail

// Full pipeline for every configured seed: train-main, train-auxue
// (+ train-ensemble for tabular), evaluation, mean over seeds.
inline RunReport run_experiment(const ExperimentConfig& cfg, const Progress& progress = {}) {
  stage("config", [&] { cfg.validate(); });
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config = cfg;
  std::ostringstream dump;
  data::RegressionDataset table;
  if (cfg.experiment == Experiment::Tabular) {
    table = stage("load-data", [&] { return data::load_tabular(cfg.data_path, cfg.target_column, cfg.sep); });
    report.dump_name = "scores.csv";
    dump << "seed,set,label,dido,aleatoric,deep_ensemble\n";
  } else {
    report.dump_name = "grid.csv";
    dump << "seed,x,prediction,aleatoric,epistemic\n";
  }
  for (std::uint64_t seed : cfg.seeds) {
    const auto ts = std::chrono::steady_clock::now();
    const auto out = cfg.experiment == Experiment::Tabular
                         ? detail::run_tabular_seed(cfg, table, seed, progress)
                         : detail::run_toy_seed(cfg, seed, progress);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - ts).count();
    report.per_seed.push_back({seed, out.metrics, secs});
    dump << out.dump_rows;
  }
  report.dump_csv = dump.str();
  for (const auto& [key, _] : report.per_seed.front().metrics) {
    double s = 0.0;
    for (const auto& r : report.per_seed) s += r.metrics.at(key);
    report.mean[key] = s / static_cast<double>(report.per_seed.size());
  }
  report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  check_finite(report);
  detail::add_acceptance(report);
  return report;
}

}  // namespace auxue::harness
