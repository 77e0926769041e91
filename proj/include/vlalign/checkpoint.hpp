#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "vlalign/adam.hpp"
#include "vlalign/params.hpp"

namespace vlalign {

constexpr int kCheckpointVersion = 1;

// Checkpoint: parameter name -> {shape, flat data} plus optimizer state.
// nlohmann serializes doubles with shortest round-trip precision, so the
// file reloads value-exact at 64 bits.
inline nlohmann::json checkpoint_to_json(const ParamStore& params, const AdamState& adam) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  nlohmann::json jp = nlohmann::json::object();
  for (size_t i = 0; i < params.count(); ++i) {
    Tensor t = params.tensor(i);
    jp[params.names()[i]] = {{"shape", t.shape()}, {"data", t.values()}};
  }
  j["params"] = std::move(jp);
  j["param_order"] = params.names();
  j["adam"] = {{"step", adam.step},
               {"learning_rate", adam.learning_rate},
               {"beta1", adam.beta1},
               {"beta2", adam.beta2},
               {"epsilon", adam.epsilon},
               {"warmup_steps", adam.warmup_steps},
               {"total_steps", adam.total_steps},
               {"first_moment", adam.first_moment},
               {"second_moment", adam.second_moment}};
  return j;
}

inline void checkpoint_from_json(const nlohmann::json& j, ParamStore& params, AdamState& adam) {
  check(j.contains("format_version"), "checkpoint: missing format_version");
  check(j.at("format_version").get<int>() == kCheckpointVersion,
        "checkpoint: unsupported format_version");
  const auto& order = j.at("param_order");
  check(order.size() == params.count(), "checkpoint: parameter count mismatch");
  const auto& jp = j.at("params");
  for (size_t i = 0; i < params.count(); ++i) {
    const std::string& name = params.names()[i];
    check(order[i].get<std::string>() == name, "checkpoint: parameter order mismatch at '" + name + "'");
    check(jp.contains(name), "checkpoint: missing parameter '" + name + "'");
    const auto& entry = jp.at(name);
    Tensor t = params.at(name);
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    check(shape == t.shape(), "checkpoint: shape mismatch for parameter '" + name + "'");
    std::vector<double> data = entry.at("data").get<std::vector<double>>();
    check(data.size() == static_cast<size_t>(t.size()),
          "checkpoint: data length mismatch for parameter '" + name + "'");
    std::copy(data.begin(), data.end(), t.raw());
  }
  const auto& ja = j.at("adam");
  adam.step = ja.at("step").get<long>();
  adam.learning_rate = ja.at("learning_rate").get<double>();
  adam.beta1 = ja.at("beta1").get<double>();
  adam.beta2 = ja.at("beta2").get<double>();
  adam.epsilon = ja.at("epsilon").get<double>();
  adam.warmup_steps = ja.at("warmup_steps").get<long>();
  adam.total_steps = ja.at("total_steps").get<long>();
  adam.first_moment = ja.at("first_moment").get<std::vector<std::vector<double>>>();
  adam.second_moment = ja.at("second_moment").get<std::vector<std::vector<double>>>();
  check(adam.first_moment.size() == params.count() && adam.second_moment.size() == params.count(),
        "checkpoint: optimizer moment count mismatch");
  for (size_t i = 0; i < params.count(); ++i) {
    check(adam.first_moment[i].size() == static_cast<size_t>(params.tensor(i).size()),
          "checkpoint: first moment shape mismatch for '" + params.names()[i] + "'");
    check(adam.second_moment[i].size() == static_cast<size_t>(params.tensor(i).size()),
          "checkpoint: second moment shape mismatch for '" + params.names()[i] + "'");
  }
}

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const AdamState& adam) {
  std::ofstream out(path);
  check(out.good(), "save_checkpoint: cannot open '" + path + "' for writing");
  out << checkpoint_to_json(params, adam) << "\n";
  check(out.good(), "save_checkpoint: write failed for '" + path + "'");
}

inline void load_checkpoint(const std::string& path, ParamStore& params, AdamState& adam) {
  std::ifstream in(path);
  check(in.good(), "load_checkpoint: cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  checkpoint_from_json(j, params, adam);
}

}  // namespace vlalign
