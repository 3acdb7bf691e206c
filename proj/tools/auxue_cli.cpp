// auxue: data generation, training, evaluation and end-to-end experiments.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "auxue/harness/experiment.hpp"

namespace fs = std::filesystem;
using namespace auxue;
using namespace auxue::harness;

namespace {

// Flags shared by every subcommand. Unset optionals leave the preset alone.
struct Common {
  std::string experiment = "toy-a";
  std::optional<std::size_t> k;
  std::optional<double> lambda;
  std::optional<std::string> dist;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string seeds;
  std::optional<std::size_t> epochs, batch, aux_epochs, aux_batch;
  std::optional<double> lr, aux_lr;
  std::string sep = ",";
  std::string out_dir = "out";
  std::string format = "json";
  std::optional<std::string> data;
  std::optional<std::string> target;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--experiment", c.experiment, "Preset: toy-a | toy-b | tabular");
  app->add_option("--k", c.k, "Number of error classes K")->check(CLI::Range(2, 1 << 20));
  app->add_option("--lambda", c.lambda, "KL regularizer weight")->check(CLI::NonNegativeNumber);
  app->add_option("--dist", c.dist, "Aleatoric distribution")
      ->check(CLI::IsMember({"gaussian", "laplace", "ggau", "nig"}));
  app->add_option("--seed", c.seed, "Run seed")->each([&c](const std::string&) { c.seed_given = true; });
  app->add_option("--seeds", c.seeds, "Comma-separated seed list (experiment)");
  app->add_option("--epochs", c.epochs, "Main-task epochs (train-auxue: AuxUE epochs)");
  app->add_option("--lr", c.lr, "Main-task learning rate (train-auxue: AuxUE)");
  app->add_option("--batch", c.batch, "Main-task batch size (train-auxue: AuxUE)");
  app->add_option("--aux-epochs", c.aux_epochs, "AuxUE epochs");
  app->add_option("--aux-lr", c.aux_lr, "AuxUE learning rate");
  app->add_option("--aux-batch", c.aux_batch, "AuxUE batch size");
  app->add_option("--sep", c.sep, "CSV field separator (one character)");
  app->add_option("--out-dir", c.out_dir, "Output directory");
  app->add_option("--format", c.format, "Stdout format")->check(CLI::IsMember({"json", "csv"}));
  app->add_option("--data", c.data, "CSV data file (overrides the preset data)");
  app->add_option("--target", c.target, "Target column name");
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractError("--seeds: '" + item + "' is not an unsigned integer");
    }
  }
  if (out.empty()) throw ContractError("--seeds: empty list");
  return out;
}

// Stage-specific training overrides: `primary` receives --epochs/--lr/--batch.
ExperimentConfig build_config(const Common& c, bool aux_primary = false) {
  ExperimentConfig cfg = ExperimentConfig::preset(experiment_from_string(c.experiment));
  if (c.k) cfg.k = *c.k;
  if (c.lambda) cfg.lambda = *c.lambda;
  if (c.dist) cfg.dist = loss::variant_from_string(*c.dist);
  if (!c.seeds.empty()) cfg.seeds = parse_seeds(c.seeds);
  else if (c.seed_given) cfg.seeds = {c.seed};
  TrainSettings& primary = aux_primary ? cfg.auxue_train : cfg.main_train;
  if (c.epochs) primary.epochs = *c.epochs;
  if (c.lr) primary.learning_rate = *c.lr;
  if (c.batch) primary.batch = *c.batch;
  if (c.aux_epochs) cfg.auxue_train.epochs = *c.aux_epochs;
  if (c.aux_lr) cfg.auxue_train.learning_rate = *c.aux_lr;
  if (c.aux_batch) cfg.auxue_train.batch = *c.aux_batch;
  if (c.sep.size() != 1) throw ContractError("--sep must be a single character");
  cfg.sep = c.sep[0];
  if (c.data) cfg.data_path = *c.data;
  if (cfg.experiment != Experiment::Tabular) cfg.target_column = "y";
  if (c.target) cfg.target_column = *c.target;
  cfg.out_dir = c.out_dir;
  cfg.validate();
  return cfg;
}

// Training data for the single-stage commands: the CSV given by --data, the
// preset's generated toy training set, or the tabular training split.
data::RegressionDataset training_data(const ExperimentConfig& cfg, const Common& c,
                                      std::uint64_t seed) {
  if (c.data || cfg.experiment == Experiment::Tabular) {
    auto all = stage("load-data",
                     [&] { return data::load_tabular(cfg.data_path, cfg.target_column, cfg.sep); });
    if (c.data) return all;
    return data::subset(data::split(all, {}, derive_seed(seed, 30)), data::Split::Train);
  }
  const auto v = cfg.experiment == Experiment::ToyA ? data::ToyVariant::A : data::ToyVariant::B;
  return data::gen_toy(v, cfg.toy_n, derive_seed(seed, 21));
}

void emit(const std::string& format, const json& j, const std::string& csv) {
  if (format == "csv") std::cout << csv;
  else std::cout << j.dump(2) << '\n';
}

std::string metrics_csv(const Metrics& m) {
  std::ostringstream out;
  out << "metric,value\n";
  char buf[64];
  for (const auto& [k, v] : m) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    out << k << ',' << buf << '\n';
  }
  return out.str();
}

void log(const std::string& s) { std::cerr << "auxue: " << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Auxiliary uncertainty estimation for regression"};
  app.require_subcommand(1);

  Common c;

  // gen-data
  std::string variant = "a";
  std::size_t n = 1000;
  std::string out_file;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic 1D dataset as CSV");
  gen->add_option("--variant", variant, "a | b")->check(CLI::IsMember({"a", "b", "A", "B"}));
  gen->add_option("--n", n, "Number of samples");
  gen->add_option("--seed", c.seed, "Seed");
  gen->add_option("--out", out_file, "Output CSV")->required();

  // train-main / train-auxue / train-ensemble / eval
  std::string main_ckpt, aux_ckpt, ens_ckpt, out_ckpt;
  std::vector<std::string> ood_files;
  bool perturb = false;

  auto* tmain = app.add_subcommand("train-main", "Train the main-task model");
  add_common(tmain, c);
  tmain->add_option("--out", out_ckpt, "Checkpoint path (default <out-dir>/main.json)");

  auto* taux = app.add_subcommand("train-auxue", "Train the AuxUE on a frozen main model");
  add_common(taux, c);
  taux->add_option("--main", main_ckpt, "Main-model checkpoint")->required();
  taux->add_option("--out", out_ckpt, "Checkpoint path (default <out-dir>/auxue.json)");

  std::size_t members = 3;
  auto* tens = app.add_subcommand("train-ensemble", "Train a deep ensemble of main models");
  add_common(tens, c);
  tens->add_option("--members", members, "Ensemble size")->check(CLI::Range(2, 64));
  tens->add_option("--out", out_ckpt, "Checkpoint path (default <out-dir>/ensemble.json)");

  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints on a CSV test set");
  add_common(ev, c);
  ev->add_option("--checkpoint", aux_ckpt, "AuxUE checkpoint")->required();
  ev->add_option("--ensemble", ens_ckpt, "Ensemble checkpoint (adds deep_ensemble scores)");
  ev->add_option("--ood", ood_files, "OOD CSV files (positives)");
  ev->add_flag("--perturb", perturb, "Also score negate_all / shuffle_features copies");

  // experiment
  std::string exp_name;
  auto* ex = app.add_subcommand("experiment", "Run a full multi-seed experiment");
  add_common(ex, c);
  ex->add_option("name", exp_name, "toy-a | toy-b | tabular")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      stage("gen-data", [&] {
        const auto v = (variant == "a" || variant == "A") ? data::ToyVariant::A : data::ToyVariant::B;
        data::write_csv(data::gen_toy(v, n, c.seed), out_file);
      });
      return 0;
    }

    if (tmain->parsed()) {
      const auto cfg = stage("config", [&] { return build_config(c); });
      const auto train = training_data(cfg, c, c.seed);
      const auto res = stage("train-main", [&] { return train_main(cfg, train, nullptr, c.seed); });
      Checkpoint ck{"main", cfg.hash(), res.model, std::nullopt, {}};
      const fs::path out = out_ckpt.empty() ? fs::path(c.out_dir) / "main.json" : fs::path(out_ckpt);
      stage("persist", [&] { save(ck, out); });
      log("final train loss " + std::to_string(res.log.final_train_loss) + ", wrote " + out.string());
      return 0;
    }

    if (taux->parsed()) {
      const auto cfg = stage("config", [&] { return build_config(c, true); });
      const auto base = stage("load", [&] { return load_checkpoint(main_ckpt); });
      const auto train = training_data(cfg, c, c.seed);
      const auto res = stage("train-auxue", [&] { return train_auxue(cfg, base.main, train, c.seed); });
      Checkpoint ck{"auxue", cfg.hash(), base.main, res.model, {}};
      const fs::path out = out_ckpt.empty() ? fs::path(c.out_dir) / "auxue.json" : fs::path(out_ckpt);
      stage("persist", [&] { save(ck, out); });
      log("final AuxUE loss " + std::to_string(res.log.final_train_loss) + ", wrote " + out.string());
      return 0;
    }

    if (tens->parsed()) {
      auto cfg = stage("config", [&] { return build_config(c); });
      cfg.ensemble_size = members;
      const auto train = training_data(cfg, c, c.seed);
      std::vector<std::uint64_t> seeds{c.seed};
      for (std::size_t m = 1; m < members; ++m) seeds.push_back(derive_seed(c.seed, 100 + m));
      const auto ens = stage("train-ensemble", [&] { return train_ensemble(cfg, train, seeds); });
      Checkpoint ck{"ensemble", cfg.hash(), ens.members.front(), std::nullopt, ens.members};
      const fs::path out = out_ckpt.empty() ? fs::path(c.out_dir) / "ensemble.json" : fs::path(out_ckpt);
      stage("persist", [&] { save(ck, out); });
      log("wrote " + out.string());
      return 0;
    }

    if (ev->parsed()) {
      const auto cfg = stage("config", [&] { return build_config(c); });
      const auto ck = stage("load", [&] { return load_checkpoint(aux_ckpt); });
      if (!ck.auxue) throw StageError("load", "'" + aux_ckpt + "' holds no AuxUE");
      std::optional<Ensemble> ens;
      if (!ens_ckpt.empty()) {
        const auto e = stage("load", [&] { return load_checkpoint(ens_ckpt); });
        ens = Ensemble{e.members.empty() ? std::vector<MainModel>{e.main} : e.members};
      }
      auto load = [&](const std::string& path) {
        return stage("load-data", [&] { return data::load_tabular(path, cfg.target_column, cfg.sep); });
      };
      if (!c.data) throw StageError("eval", "--data is required");
      const auto test = load(*c.data);
      Metrics m = stage("eval", [&] {
        Metrics out = evaluate_main(ck.main, test);
        out.merge(evaluate_auxue_id(*ck.auxue, ck.main, test));
        return out;
      });
      std::vector<OodSet> sets;
      for (const auto& f : ood_files) sets.push_back({fs::path(f).stem().string(), load(f)});
      if (perturb) {
        for (auto& s : detail::make_ood_sets(test, c.seed)) sets.push_back(std::move(s));
      }
      stage("eval", [&] {
        const Ensemble* e = ens ? &*ens : nullptr;
        const ScoreSet id = score_inputs(*ck.auxue, ck.main, e, test.features);
        for (const auto& s : sets) {
          m.merge(evaluate_ood(id, score_inputs(*ck.auxue, ck.main, e, s.data.features), s.name));
        }
      });
      json j = {{"checkpoint", aux_ckpt}, {"config_hash", ck.config_hash}, {"metrics", m}};
      emit(c.format, j, metrics_csv(m));
      return 0;
    }

    if (ex->parsed()) {
      c.experiment = exp_name;
      const auto cfg = stage("config", [&] { return build_config(c); });
      const auto report = run_experiment(cfg, [](const std::string& s) { log(s); });
      stage("persist", [&] { write_report(report, cfg.out_dir); });
      for (const auto& a : report.acceptance) {
        log(std::string(a.pass ? "PASS " : "FAIL ") + a.name + " = " + std::to_string(a.value) +
            " (" + a.rule + ")");
      }
      emit(c.format, report.to_json(), report.headline_csv());
      return 0;
    }
  } catch (const StageError& e) {
    std::cerr << "auxue: error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "auxue: error: [cli] " << e.what() << '\n';
    return 2;
  }
  return 1;
}
