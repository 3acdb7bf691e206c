#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "auxue/harness/training.hpp"

namespace auxue::harness {

inline constexpr int kFormatVersion = 1;

// Writes `text` to path via a sibling temp file and rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + tmp.string() + "' for writing");
    out << text;
    out.flush();
    if (!out) throw FormatError("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// JSON encoding of the model pieces

namespace codec {

inline json encode(const nn::MLPSpec& s) {
  std::vector<std::string> acts;
  for (auto a : s.activations) acts.emplace_back(nn::to_string(a));
  return {{"widths", s.widths}, {"activations", acts}};
}

inline json encode(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

inline json encode(const nn::Mlp& m) {
  json params = json::array();
  for (const auto& t : m.params) params.push_back(encode(t));
  return {{"spec", encode(m.spec)}, {"params", params}};
}

inline json encode(const data::Standardizer& s) { return {{"mean", s.mean}, {"scale", s.scale}}; }

inline json encode(const dido::DiscretizationSpec& d) {
  return {{"k", d.k}, {"thresholds", d.thresholds}};
}

inline json encode(const MainModel& m) {
  return {{"net", encode(m.net)}, {"standardizer", encode(m.standardizer)}};
}

inline json encode(const Auxue& a) {
  return {{"variant", loss::to_string(a.variant)},
          {"features", to_string(a.source)},
          {"aleatoric", encode(a.aleatoric)},
          {"epistemic", encode(a.epistemic)},
          {"discretization", encode(a.discretization)}};
}

// Decoders throw json exceptions on missing keys / wrong types; load()
// converts those into FormatError.

inline nn::MLPSpec decode_spec(const json& j) {
  nn::MLPSpec s;
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) {
    s.activations.push_back(nn::activation_from_string(a.get<std::string>()));
  }
  s.validate();
  return s;
}

inline Tensor decode_tensor(const json& j) {
  const auto shape = j.at("shape").get<ad::Shape>();
  auto values = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || values.size() != ad::element_count(shape)) {
    throw FormatError("tensor data does not match shape " + ad::to_string(shape));
  }
  return Tensor::matrix(shape[0], shape[1], std::move(values));
}

inline nn::Mlp decode_mlp(const json& j) {
  nn::Mlp m;
  m.spec = decode_spec(j.at("spec"));
  for (const auto& t : j.at("params")) m.params.push_back(decode_tensor(t));
  // Shapes must be exactly those init_mlp would produce.
  const nn::Mlp ref = nn::init_mlp(m.spec, 0);
  if (ref.params.size() != m.params.size()) {
    throw FormatError("parameter tensor count " + std::to_string(m.params.size()) +
                      " does not match spec (" + std::to_string(ref.params.size()) + ")");
  }
  for (std::size_t i = 0; i < ref.params.size(); ++i) {
    if (ref.params[i].shape() != m.params[i].shape()) {
      throw FormatError("parameter " + std::to_string(i) + " has shape " +
                        ad::to_string(m.params[i].shape()) + ", spec expects " +
                        ad::to_string(ref.params[i].shape()));
    }
  }
  return m;
}

inline data::Standardizer decode_standardizer(const json& j) {
  data::Standardizer s{j.at("mean").get<std::vector<double>>(),
                       j.at("scale").get<std::vector<double>>()};
  if (s.mean.size() != s.scale.size()) throw FormatError("standardizer size mismatch");
  return s;
}

inline dido::DiscretizationSpec decode_discretization(const json& j) {
  dido::DiscretizationSpec d{j.at("k").get<std::size_t>(),
                             j.at("thresholds").get<std::vector<double>>()};
  if (d.k < 2 || d.thresholds.size() != d.k + 1) throw FormatError("bad discretization");
  return d;
}

inline MainModel decode_main(const json& j) {
  MainModel m{decode_mlp(j.at("net")), decode_standardizer(j.at("standardizer"))};
  if (m.standardizer.mean.size() != m.net.spec.input_width()) {
    throw FormatError("standardizer width does not match main model input");
  }
  return m;
}

inline Auxue decode_auxue(const json& j) {
  Auxue a;
  a.variant = loss::variant_from_string(j.at("variant").get<std::string>());
  a.source = feature_source_from_string(j.at("features").get<std::string>());
  a.aleatoric = decode_mlp(j.at("aleatoric"));
  a.epistemic = decode_mlp(j.at("epistemic"));
  a.discretization = decode_discretization(j.at("discretization"));
  if (a.aleatoric.spec.output_width() != loss::head_width(a.variant)) {
    throw FormatError("aleatoric head width does not match variant");
  }
  if (a.epistemic.spec.output_width() != a.discretization.k) {
    throw FormatError("epistemic head width does not match K");
  }
  return a;
}

}  // namespace codec

// ---------------------------------------------------------------------------
// Checkpoint: a main model, optionally with an AuxUE or extra ensemble members.

struct Checkpoint {
  std::string kind = "main";  // main | auxue | ensemble
  std::string config_hash;
  MainModel main;
  std::optional<Auxue> auxue;
  std::vector<MainModel> members;  // ensemble only

  json to_json() const {
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = kind;
    j["config_hash"] = config_hash;
    j["main"] = codec::encode(main);
    if (auxue) j["auxue"] = codec::encode(*auxue);
    if (!members.empty()) {
      j["members"] = json::array();
      for (const auto& m : members) j["members"].push_back(codec::encode(m));
    }
    return j;
  }

  static Checkpoint from_json(const json& j) {
    try {
      const int version = j.at("format_version").get<int>();
      if (version != kFormatVersion) {
        throw FormatError("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kFormatVersion) + ")");
      }
      Checkpoint c;
      c.kind = j.at("kind").get<std::string>();
      if (c.kind != "main" && c.kind != "auxue" && c.kind != "ensemble") {
        throw FormatError("unknown checkpoint kind '" + c.kind + "'");
      }
      c.config_hash = j.at("config_hash").get<std::string>();
      c.main = codec::decode_main(j.at("main"));
      if (j.contains("auxue")) c.auxue = codec::decode_auxue(j.at("auxue"));
      if (j.contains("members")) {
        for (const auto& m : j.at("members")) c.members.push_back(codec::decode_main(m));
      }
      if (c.kind == "auxue" && !c.auxue) throw FormatError("auxue checkpoint without auxue");
      return c;
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed checkpoint: ") + e.what());
    } catch (const ContractError& e) {
      throw FormatError(std::string("malformed checkpoint: ") + e.what());
    }
  }
};

inline void save(const Checkpoint& c, const std::filesystem::path& path) {
  write_atomic(path, c.to_json().dump());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError("malformed checkpoint '" + path.string() + "': " + e.what());
  }
  return Checkpoint::from_json(j);
}

}  // namespace auxue::harness
