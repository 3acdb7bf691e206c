#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "auxue/diffkit/tensor.hpp"
#include "auxue/error.hpp"

namespace auxue::data {

using ad::Tensor;

enum class Split { Train, Val, Test };

struct RegressionDataset {
  Tensor features;  // [n x d]
  std::vector<double> targets;
  std::vector<std::string> feature_names;
  std::string target_name = "y";
  std::vector<Split> split;  // empty until split() is applied

  std::size_t rows() const { return targets.size(); }
  std::size_t dims() const { return features.cols(); }

  Tensor target_column() const { return Tensor::column(targets); }
};

// Rows with the given split tag.
inline RegressionDataset subset(const RegressionDataset& ds, Split which) {
  if (ds.split.size() != ds.rows()) throw ContractError("subset: dataset has no split tags");
  RegressionDataset out;
  out.feature_names = ds.feature_names;
  out.target_name = ds.target_name;
  std::vector<double> feats;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (ds.split[i] != which) continue;
    auto row = ds.features.row_span(i);
    feats.insert(feats.end(), row.begin(), row.end());
    out.targets.push_back(ds.targets[i]);
  }
  out.features = Tensor::matrix(out.targets.size(), ds.dims(), std::move(feats));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic 1D data: y = 10 sin(x) + eps with piecewise noise.

enum class ToyVariant { A, B };

// A: x ~ U[-3, 3], noise std 3 for x < 0 and 1 otherwise.
// B: x ~ U([-3, -1] u [3, 5]) (each interval with probability 1/2), noise std
//    3 on [-3, -1] and 1 on [3, 5].
inline RegressionDataset gen_toy(ToyVariant variant, std::size_t n, std::uint64_t seed) {
  if (n < 10) throw ContractError("gen_toy: n must be >= 10");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0.0, std_dev = 1.0;
    if (variant == ToyVariant::A) {
      x = -3.0 + 6.0 * unit(rng);
      std_dev = x < 0.0 ? 3.0 : 1.0;
    } else if (unit(rng) < 0.5) {
      x = -3.0 + 2.0 * unit(rng);
      std_dev = 3.0;
    } else {
      x = 3.0 + 2.0 * unit(rng);
      std_dev = 1.0;
    }
    xs[i] = x;
    ys[i] = 10.0 * std::sin(x) + std_dev * noise(rng);
  }
  RegressionDataset ds;
  ds.features = Tensor::matrix(n, 1, std::move(xs));
  ds.targets = std::move(ys);
  ds.feature_names = {"x"};
  ds.target_name = "y";
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == sep && !quoted) {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  for (auto& c : cells) {
    const auto b = c.find_first_not_of(" \t");
    const auto e = c.find_last_not_of(" \t");
    c = (b == std::string::npos) ? std::string() : c.substr(b, e - b + 1);
  }
  return cells;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

// Header row required; every non-target column becomes a feature.
inline RegressionDataset load_tabular(const std::string& path, const std::string& target_column,
                                      char sep = ',') {
  std::ifstream in(path);
  if (!in) throw FormatError("load_tabular: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos) {
    throw FormatError("load_tabular: '" + path + "' is empty");
  }
  const auto header = detail::split_line(line, sep);
  const auto it = std::find(header.begin(), header.end(), target_column);
  if (it == header.end()) {
    throw FormatError("load_tabular: target column '" + target_column + "' not found in '" +
                      path + "'");
  }
  const auto target_idx = static_cast<std::size_t>(it - header.begin());
  RegressionDataset ds;
  ds.target_name = target_column;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != target_idx) ds.feature_names.push_back(header[c]);
  }
  std::vector<double> feats;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_line(line, sep);
    if (cells.size() != header.size()) {
      throw FormatError("load_tabular: row " + std::to_string(row) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v)) {
        throw FormatError("load_tabular: non-numeric cell at row " + std::to_string(row) +
                          ", column '" + header[c] + "': '" + cells[c] + "'");
      }
      if (c == target_idx) ds.targets.push_back(v);
      else feats.push_back(v);
    }
  }
  if (ds.targets.empty()) throw FormatError("load_tabular: '" + path + "' has no data rows");
  ds.features = Tensor::matrix(ds.targets.size(), ds.feature_names.size(), std::move(feats));
  return ds;
}

inline void write_csv(const RegressionDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_csv: cannot open '" + path + "' for writing");
  out.precision(17);
  for (const auto& name : ds.feature_names) out << name << ',';
  out << ds.target_name << '\n';
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (double v : ds.features.row_span(i)) out << v << ',';
    out << ds.targets[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splits, perturbations, standardization

struct SplitFractions {
  double train = 0.72;
  double val = 0.08;
  double test = 0.20;
};

// Seeded permutation, then contiguous train / val / test blocks. Val and test
// sizes are floor(fraction * n); train takes the remainder.
inline RegressionDataset split(RegressionDataset ds, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0.0 && f.val > 0.0 && f.test > 0.0) ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ContractError("split: fractions must be positive and sum to 1");
  }
  const std::size_t n = ds.rows();
  const auto n_test = static_cast<std::size_t>(std::floor(f.test * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n) + 1e-9));
  if (n_test == 0 || n_val == 0 || n_test + n_val >= n) {
    throw ContractError("split: degenerate split for n = " + std::to_string(n) + " (train " +
                        std::to_string(n - std::min(n, n_test + n_val)) + ", val " +
                        std::to_string(n_val) + ", test " + std::to_string(n_test) + ")");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_train = n - n_test - n_val;
  ds.split.assign(n, Split::Train);
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= n_train + n_val) ds.split[perm[i]] = Split::Test;
    else if (i >= n_train) ds.split[perm[i]] = Split::Val;
  }
  return ds;
}

enum class Perturbation { NegateAll, ShuffleFeatures };

inline const char* to_string(Perturbation p) {
  return p == Perturbation::NegateAll ? "negate_all" : "shuffle_features";
}

struct PerturbationKind {
  Perturbation tag = Perturbation::NegateAll;
  std::uint64_t seed = 0;
};

// negate_all: x -> -|x|. shuffle_features: an independent seeded permutation
// of each feature column. Targets are untouched.
inline RegressionDataset perturb(RegressionDataset ds, const PerturbationKind& kind) {
  const std::size_t n = ds.rows(), d = ds.dims();
  if (kind.tag == Perturbation::NegateAll) {
    for (auto& v : ds.features.data()) v = -std::abs(v);
    return ds;
  }
  std::mt19937_64 rng(kind.seed);
  std::vector<std::size_t> perm(n);
  std::vector<double> column(n);
  for (std::size_t c = 0; c < d; ++c) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t r = 0; r < n; ++r) column[r] = ds.features.at(perm[r], c);
    for (std::size_t r = 0; r < n; ++r) ds.features.at(r, c) = column[r];
  }
  return ds;
}

// Per-column z-score with statistics from one dataset (a constant column
// gets scale 1).
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Tensor& x) {
    const std::size_t n = x.rows(), d = x.cols();
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
    for (std::size_t c = 0; c < d; ++c) {
      double m = 0.0;
      for (std::size_t r = 0; r < n; ++r) m += x.at(r, c);
      m /= static_cast<double>(n);
      double v = 0.0;
      for (std::size_t r = 0; r < n; ++r) v += (x.at(r, c) - m) * (x.at(r, c) - m);
      v /= static_cast<double>(n);
      s.mean[c] = m;
      s.scale[c] = v > 0.0 ? std::sqrt(v) : 1.0;
    }
    return s;
  }

  // Identity transform of width d.
  static Standardizer identity(std::size_t d) {
    return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  }

  Tensor apply(const Tensor& x) const {
    if (x.cols() != mean.size()) {
      throw ShapeError("Standardizer::apply", ad::to_string(x.shape()),
                       "[n x " + std::to_string(mean.size()) + "]");
    }
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = (x.at(r, c) - mean[c]) / scale[c];
    }
    return out;
  }

  bool operator==(const Standardizer&) const = default;
};

}  // namespace auxue::data
