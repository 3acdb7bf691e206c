#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "auxue/harness/experiment.hpp"

using namespace auxue;
using namespace auxue::harness;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_toy(Experiment e = Experiment::ToyA) {
  auto c = ExperimentConfig::preset(e);
  c.seeds = {1};
  c.main_hidden = {32, 32};
  c.main_train = {1e-3, 5, 32};
  c.auxue_train = {5e-3, 15, 32};
  c.epistemic_hidden = 32;
  c.toy_n = 200;
  c.toy_grid = 60;
  return c;
}

ExperimentConfig small_tabular() {
  auto c = ExperimentConfig::preset(Experiment::Tabular);
  c.seeds = {1};
  c.main_train = {1e-3, 3, 64};
  c.auxue_train = {1e-3, 3, 64};
  c.epistemic_hidden = 16;
  c.ensemble_size = 2;
  c.data_path = std::string(AUXUE_DATA_DIR) + "/winequality-red.csv";
  return c;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / "auxue_harness_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Tensor random_inputs(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-4.0, 6.0);
  std::vector<double> v(n * d);
  for (auto& x : v) x = u(rng);
  return Tensor::matrix(n, d, std::move(v));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AUXUE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, HashTracksContentButNotOutputDir) {
  auto a = small_toy();
  auto b = small_toy();
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.out_dir = "elsewhere";
  EXPECT_EQ(a.hash(), b.hash());
  b.k = 6;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, ValidateAndNames) {
  auto c = small_toy();
  c.k = 1;
  EXPECT_THROW(c.validate(), ContractError);
  c = small_toy();
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), ContractError);
  for (auto e : {Experiment::ToyA, Experiment::ToyB, Experiment::Tabular}) {
    EXPECT_EQ(experiment_from_string(to_string(e)), e);
  }
  EXPECT_THROW((void)experiment_from_string("mnist"), ContractError);
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
}

TEST(Training, MainIsDeterministic) {
  const auto cfg = small_toy();
  const auto train = data::gen_toy(data::ToyVariant::A, 200, 3);
  const auto a = train_main(cfg, train, nullptr, 7);
  const auto b = train_main(cfg, train, nullptr, 7);
  ASSERT_EQ(a.model.net.params.size(), b.model.net.params.size());
  for (std::size_t i = 0; i < a.model.net.params.size(); ++i) {
    EXPECT_TRUE(a.model.net.params[i] == b.model.net.params[i]);
  }
  EXPECT_EQ(a.log.epoch_loss, b.log.epoch_loss);
  EXPECT_EQ(a.log.epoch_loss.size(), 5u);
}

TEST(Training, AuxueLeavesMainFrozen) {
  const auto cfg = small_toy();
  const auto train = data::gen_toy(data::ToyVariant::A, 200, 3);
  const auto main = train_main(cfg, train, nullptr, 7).model;
  const auto before = main.net.params;
  const auto aux = train_auxue(cfg, main, train, 7);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i] == main.net.params[i]);
  EXPECT_EQ(aux.log.epoch_loss.size(), 15u);
  for (double l : aux.log.epoch_loss) EXPECT_TRUE(std::isfinite(l));

  // The feature stream is plain data: differentiating anything built on it
  // reaches no main-model parameter.
  const Tensor feats = extract_features(main, FeatureSource::Penultimate, train.features);
  EXPECT_EQ(feats.cols(), 32u);
  std::vector<ad::Var> mp;
  for (const auto& p : main.net.params) mp.push_back(ad::parameter(p));
  const ad::Var loss = ad::sum(ad::constant(feats) * ad::constant(feats));
  const auto g = ad::backward(loss);
  for (const auto& p : mp) EXPECT_FALSE(g.contains(p));
}

TEST(Training, FeatureWidths) {
  auto cfg = small_toy();
  cfg.main_hidden = {300, 300, 300, 300};
  EXPECT_EQ(cfg.main_spec(1).widths.at(4), 300u);
  EXPECT_EQ(epistemic_spec(cfg, 300).widths, (std::vector<std::size_t>{300, 32, 5}));

  const auto tab = small_tabular();
  const auto a = aleatoric_spec(tab, 11);
  const auto e = epistemic_spec(tab, 11);
  EXPECT_EQ(a.widths, (std::vector<std::size_t>{11, 16, 1}));
  EXPECT_EQ(e.widths, (std::vector<std::size_t>{11, 16, 16, 5}));
  EXPECT_EQ(e.activations.back(), nn::Activation::Exp);
  EXPECT_EQ(e.activations.at(1), nn::Activation::CosineRelu);
}

TEST(Training, EvidenceExceedsPriorAfterTraining) {
  const auto cfg = small_toy();
  const auto train = data::gen_toy(data::ToyVariant::A, 200, 3);
  const auto main = train_main(cfg, train, nullptr, 7).model;
  const auto aux = train_auxue(cfg, main, train, 7).model;
  const auto out = predict_auxue(aux, main, train.features);
  double s = 0.0;
  for (double v : out.evidence.data()) s += v;
  s /= static_cast<double>(train.rows());
  EXPECT_GT(s + static_cast<double>(cfg.k), static_cast<double>(cfg.k) + 0.1);
  for (double u : out.epistemic) {
    EXPECT_GT(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
  for (double a : out.aleatoric) EXPECT_GT(a, 0.0);
}

TEST(Training, EnsembleBasics) {
  const auto cfg = small_toy();
  const auto train = data::gen_toy(data::ToyVariant::A, 200, 3);
  const auto test = data::gen_toy(data::ToyVariant::A, 200, 4);
  const std::vector<std::uint64_t> same = {5, 5};
  const auto twins = train_ensemble(cfg, train, same);
  for (double v : twins.variance(test.features)) EXPECT_EQ(v, 0.0);

  const std::vector<std::uint64_t> seeds = {5, 6, 7};
  const auto ens = train_ensemble(cfg, train, seeds);
  auto mse = [&](const std::vector<double>& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::pow(p[i] - test.targets[i], 2);
    return s / static_cast<double>(p.size());
  };
  double worst = 0.0;
  for (const auto& m : ens.members) worst = std::max(worst, mse(m.predict(test.features)));
  EXPECT_LE(mse(ens.mean_prediction(test.features)), worst);
  const std::vector<std::uint64_t> one = {5};
  EXPECT_THROW((void)train_ensemble(cfg, train, one), ContractError);
}

TEST(Checkpoint, RoundTripPredictsIdentically) {
  const auto cfg = small_tabular();
  const auto all = data::load_tabular(cfg.data_path, cfg.target_column);
  const auto train = data::subset(data::split(all, {}, 1), data::Split::Train);
  const auto main = train_main(cfg, train, nullptr, 2).model;
  const auto aux = train_auxue(cfg, main, train, 2).model;
  Checkpoint c;
  c.kind = "auxue";
  c.config_hash = cfg.hash();
  c.main = main;
  c.auxue = aux;
  const auto dir = scratch("ckpt");
  save(c, dir / "auxue.json");
  const auto back = load_checkpoint(dir / "auxue.json");
  EXPECT_EQ(back.kind, "auxue");
  EXPECT_EQ(back.config_hash, c.config_hash);
  ASSERT_TRUE(back.auxue.has_value());

  const Tensor x = random_inputs(100, 11, 9);
  EXPECT_EQ(back.main.predict(x), main.predict(x));
  const auto p0 = predict_auxue(aux, main, x);
  const auto p1 = predict_auxue(*back.auxue, back.main, x);
  EXPECT_EQ(p0.aleatoric, p1.aleatoric);
  EXPECT_EQ(p0.epistemic, p1.epistemic);
  EXPECT_TRUE(back.auxue->discretization.thresholds == aux.discretization.thresholds);
}

TEST(Checkpoint, RejectsDamagedFiles) {
  const auto cfg = small_toy();
  const auto train = data::gen_toy(data::ToyVariant::A, 50, 3);
  Checkpoint c;
  c.main = train_main(cfg, train, nullptr, 1).model;
  const auto dir = scratch("damaged");
  save(c, dir / "main.json");
  const std::string text = read_text(dir / "main.json");

  write_atomic(dir / "cut.json", text.substr(0, text.size() / 2));
  EXPECT_THROW((void)load_checkpoint(dir / "cut.json"), FormatError);

  auto j = nlohmann::json::parse(text);
  j["format_version"] = kFormatVersion + 1;
  write_atomic(dir / "future.json", j.dump());
  try {
    (void)load_checkpoint(dir / "future.json");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  j = nlohmann::json::parse(text);
  j["main"]["net"]["params"][0]["data"].erase(0);
  write_atomic(dir / "short.json", j.dump());
  EXPECT_THROW((void)load_checkpoint(dir / "short.json"), FormatError);
  EXPECT_THROW((void)load_checkpoint(dir / "missing.json"), FormatError);
}

TEST(Experiment, ToyReportSchema) {
  auto cfg = small_toy(Experiment::ToyB);
  const auto report = run_experiment(cfg);
  const auto j = report.to_json();
  for (const char* key : {"schema", "experiment", "config", "config_hash", "seeds", "per_seed", "mean",
                          "acceptance", "timing"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["experiment"], "toy-b");
  EXPECT_EQ(j["acceptance"].size(), 2u);
  EXPECT_TRUE(report.mean.count("region.epistemic_between"));

  const auto dir = scratch("report");
  write_report(report, dir);
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "grid.csv"));
  EXPECT_EQ(read_text(dir / "headline.csv"), report.headline_csv());
  EXPECT_EQ(run_experiment(cfg).headline_csv(), report.headline_csv());
}

TEST(Experiment, TabularReportHasOodMetrics) {
  const auto report = run_experiment(small_tabular());
  for (const char* key : {"main.test_mse", "ood.mean.dido.auc", "ood.mean.dido.aupr",
                          "ood.mean.deep_ensemble.auc", "ood.negate_all.dido.auc",
                          "ood.shuffle_features.dido.auc"}) {
    ASSERT_TRUE(report.mean.count(key)) << key;
    EXPECT_TRUE(std::isfinite(report.mean.at(key))) << key;
  }
  EXPECT_EQ(report.acceptance.size(), 5u);
}

TEST(Experiment, StageErrorsNameTheStage) {
  auto cfg = small_tabular();
  cfg.data_path = "/nonexistent.csv";
  try {
    (void)run_experiment(cfg);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_NE(std::string(e.what()).find("load-data"), std::string::npos) << e.what();
  }
}

TEST(Cli, GenDataAndExitCodes) {
  const auto dir = scratch("cli");
  const auto out = dir / "toy.csv";
  ASSERT_EQ(run_cli("gen-data --variant b --n 40 --seed 3 --out " + out.string()), 0);
  const auto ds = data::load_tabular(out.string(), "y");
  EXPECT_EQ(ds.rows(), 40u);
  const auto ref = data::gen_toy(data::ToyVariant::B, 40, 3);
  EXPECT_TRUE(ds.features == ref.features);

  EXPECT_EQ(run_cli("gen-data --variant b --n 5 --out " + out.string()), 2);
  EXPECT_EQ(run_cli("experiment toy-a --epochs 0"), 2);
  EXPECT_NE(run_cli("experiment toy-a --k 1"), 0);
  EXPECT_NE(run_cli("no-such-command"), 0);
  EXPECT_NE(run_cli("eval --checkpoint " + (dir / "nope.json").string() + " --data " + out.string()), 0);
}

TEST(Cli, ExperimentKeepsPresetSeedsUnlessOverridden) {
  const auto dir = scratch("cli_seeds");
  const std::string quick = "experiment toy-b --epochs 1 --aux-epochs 1 --format csv";
  ASSERT_EQ(run_cli(quick + " --out-dir " + (dir / "a").string()), 0);
  const auto preset = read_text(dir / "a" / "headline.csv");
  EXPECT_EQ(preset.substr(0, preset.find('\n')), "metric,seed_1,seed_2,seed_3,mean");
  ASSERT_EQ(run_cli(quick + " --seed 7 --out-dir " + (dir / "b").string()), 0);
  const auto single = read_text(dir / "b" / "headline.csv");
  EXPECT_EQ(single.substr(0, single.find('\n')), "metric,seed_7,mean");
}
