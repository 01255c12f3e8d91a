#include "odebundle/network.hpp"

#include <cmath>
#include <fstream>

#include "odebundle/rng.hpp"

namespace odebundle {

void NetworkSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw ConfigError("network: dimensions must be >= 1");
  for (int w : hidden)
    if (w < 1) throw ConfigError("network: hidden widths must be >= 1");
}

NetworkParams init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkParams params;
  params.spec = spec;
  params.values.resize(static_cast<std::size_t>(spec.parameter_count()));

  Rng rng(seed);
  std::size_t offset = 0;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int fan_in = spec.layer_in(l);
    const int fan_out = spec.layer_out(l);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    const std::size_t nw = static_cast<std::size_t>(fan_in) * fan_out;
    for (std::size_t k = 0; k < nw; ++k) params.values[offset + k] = rng.uniform(-limit, limit);
    for (int k = 0; k < fan_out; ++k) params.values[offset + nw + k] = 0.0;
    offset += nw + fan_out;
  }
  return params;
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden", spec.hidden},
          {"output_dim", spec.output_dim},
          {"skip_connections", spec.skip_connections}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.hidden = j.at("hidden").get<std::vector<int>>();
  spec.output_dim = j.at("output_dim").get<int>();
  spec.skip_connections = j.value("skip_connections", false);
  spec.validate();
  return spec;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json j;
  j["format"] = "odebundle-checkpoint";
  j["version"] = 1;
  j["network"] = spec_to_json(ckpt.params.spec);
  j["seed"] = ckpt.seed;
  j["params"] = ckpt.params.values;
  j["meta"] = {{"batches", ckpt.batches},
               {"raw_loss", ckpt.raw_loss},
               {"smoothed_loss", ckpt.smoothed_loss}};
  j["extra"] = ckpt.extra;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing checkpoint: " + path);
  }
  // Write-then-rename keeps the previous checkpoint valid if interrupted.
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("failed to move checkpoint into place: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    if (j.at("format").get<std::string>() != "odebundle-checkpoint")
      throw IoError("not an odebundle checkpoint: " + path);
    ckpt.params.spec = spec_from_json(j.at("network"));
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.params.values = j.at("params").get<std::vector<double>>();
    const auto& meta = j.at("meta");
    ckpt.batches = meta.at("batches").get<std::int64_t>();
    ckpt.raw_loss = meta.at("raw_loss").get<double>();
    ckpt.smoothed_loss = meta.at("smoothed_loss").get<double>();
    ckpt.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path + ": " + e.what());
  }

  if (ckpt.params.values.size() != static_cast<std::size_t>(ckpt.params.spec.parameter_count()))
    throw IoError("checkpoint parameter count does not match declared architecture: " + path);
  return ckpt;
}

}  // namespace odebundle
