#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "matchinggan/data.hpp"
#include "matchinggan/discriminator.hpp"
#include "matchinggan/generator.hpp"

// Run configuration. The JSON form uses the field names below; every field
// can be overridden from the command line by a flag of the same name with
// dashes (lambda_r -> --lambda-r).

namespace mgan {

using json = nlohmann::json;

struct TrainConfig {
  // objective
  double lambda_r = 0.1;
  double lambda_m = 1.0;
  int k = 3;
  // optimization
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double clip_norm = 0;
  int epochs = 200;
  int batch_episodes = 16;
  int d_steps_per_g_step = 1;
  int episodes_per_epoch = 0;  // 0: ceil(seen images / K)
  int validation_episodes = 64;
  int checkpoint_every = 1;
  std::uint64_t seed = 0;
  // data
  std::string manifest;
  std::string split;
  // generator
  int noise_dim = 128;
  std::vector<int> gen_channels{64, 64, 128, 128};
  int skip_connections = 2;
  bool shared_encoder = true;
  std::string coefficient_mode = "matched";
  double dropout = 0.2;
  double init_std = 0.02;
  // discriminator
  std::vector<int> disc_channels{64, 128, 256, 512, 1024};

  GeneratorConfig generator(int image_channels, int resolution) const {
    GeneratorConfig g;
    g.image_channels = image_channels;
    g.resolution = resolution;
    g.noise_dim = noise_dim;
    if (gen_channels.size() != 4) throw ConfigError("gen_channels must list four widths");
    std::copy(gen_channels.begin(), gen_channels.end(), g.channels.begin());
    g.skip_connections = skip_connections;
    g.shared_encoder = shared_encoder;
    g.coefficient_mode = parse_coefficient_mode(coefficient_mode);
    g.dropout = dropout;
    g.init_std = init_std;
    return g;
  }

  DiscriminatorConfig discriminator(int image_channels, int resolution, int num_classes) const {
    DiscriminatorConfig d;
    d.image_channels = image_channels;
    d.resolution = resolution;
    d.num_classes = num_classes;
    d.channels = disc_channels;
    return d;
  }

  // Every violated constraint, in field order.
  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    auto need = [&](bool ok, const std::string& msg) {
      if (!ok) p.push_back(msg);
    };
    need(lambda_r >= 0, "lambda_r must be >= 0 (got " + std::to_string(lambda_r) + ")");
    need(lambda_m >= 0, "lambda_m must be >= 0 (got " + std::to_string(lambda_m) + ")");
    need(k >= 1, "k must be >= 1 (got " + std::to_string(k) + ")");
    need(learning_rate > 0, "learning_rate must be > 0 (got " + std::to_string(learning_rate) + ")");
    need(beta1 >= 0 && beta1 < 1, "beta1 must lie in [0, 1)");
    need(beta2 >= 0 && beta2 < 1, "beta2 must lie in [0, 1)");
    need(clip_norm >= 0, "clip_norm must be >= 0");
    need(epochs >= 1, "epochs must be >= 1 (got " + std::to_string(epochs) + ")");
    need(batch_episodes >= 1, "batch_episodes must be >= 1");
    need(d_steps_per_g_step >= 1, "d_steps_per_g_step must be >= 1");
    need(episodes_per_epoch >= 0, "episodes_per_epoch must be >= 0");
    need(validation_episodes >= 0, "validation_episodes must be >= 0");
    need(checkpoint_every >= 1, "checkpoint_every must be >= 1");
    need(noise_dim >= 1, "noise_dim must be >= 1");
    need(gen_channels.size() == 4, "gen_channels must list four widths");
    for (int c : gen_channels) need(c >= 1, "gen_channels entries must be positive");
    need(skip_connections >= 1 && skip_connections <= 3,
         "skip_connections must be 1, 2 or 3 (got " + std::to_string(skip_connections) + ")");
    need(coefficient_mode == "matched" || coefficient_mode == "random",
         "coefficient_mode must be 'matched' or 'random' (got '" + coefficient_mode + "')");
    need(dropout >= 0 && dropout < 1, "dropout must lie in [0, 1)");
    need(init_std > 0, "init_std must be > 0");
    need(disc_channels.size() == 5, "disc_channels must list five widths");
    for (int c : disc_channels) need(c >= 1, "disc_channels entries must be positive");
    return p;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& s : p) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lambda_r, lambda_m, k, learning_rate, beta1, beta2,
                                                clip_norm, epochs, batch_episodes, d_steps_per_g_step,
                                                episodes_per_epoch, validation_episodes, checkpoint_every, seed,
                                                manifest, split, noise_dim, gen_channels, skip_connections,
                                                shared_encoder, coefficient_mode, dropout, init_std, disc_channels)

inline std::vector<std::string> config_field_names() {
  const json defaults = TrainConfig{};
  std::vector<std::string> out;
  for (const auto& [key, _] : defaults.items()) out.push_back(key);
  return out;
}

inline bool type_compatible(const json& d, const json& v) {
  if (d.is_boolean()) return v.is_boolean();
  if (d.is_string()) return v.is_string();
  if (d.is_array())
    return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
  if (d.is_number_float()) return v.is_number();
  if (d.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  return v.is_number_integer();
}

// Parses a config object, rejecting unknown keys and wrongly typed values;
// missing keys keep their defaults. Problems are collected, not thrown one
// at a time.
inline TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  const json defaults = TrainConfig{};
  std::vector<std::string> problems;
  json merged = defaults;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) {
      problems.push_back("unknown field '" + key + "'");
      continue;
    }
    if (!type_compatible(defaults[key], value)) {
      problems.push_back("field '" + key + "' has the wrong type (expected " + std::string(defaults[key].type_name()) + ")");
      continue;
    }
    merged[key] = value;
  }
  TrainConfig cfg;
  if (problems.empty()) {
    try {
      cfg = merged.get<TrainConfig>();
    } catch (const json::exception& e) {
      problems.push_back(e.what());
    }
  }
  if (problems.empty()) problems = cfg.problems();
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& s : problems) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
  return cfg;
}

// Converts a textual override to the JSON type of the named field.
inline json parse_override(const std::string& field, const std::string& text) {
  const json defaults = TrainConfig{};
  if (!defaults.contains(field)) throw ConfigError("unknown field '" + field + "'");
  const auto& d = defaults[field];
  try {
    if (d.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("field '" + field + "' expects true or false, got '" + text + "'");
    }
    if (d.is_string()) return text;
    if (d.is_array()) {
      json arr = json::array();
      std::size_t start = 0;
      while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        arr.push_back(std::stoi(item));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      return arr;
    }
    std::size_t used = 0;
    json out;
    if (d.is_number_float()) {
      out = std::stod(text, &used);
    } else if (d.is_number_unsigned()) {
      out = std::stoull(text, &used);
    } else {
      out = std::stoll(text, &used);
    }
    if (used != text.size()) throw std::invalid_argument(text);
    return out;
  } catch (const std::logic_error&) {
    throw ConfigError("field '" + field + "' cannot parse value '" + text + "'");
  }
}

// File values, then overrides; flags win.
inline TrainConfig resolve_config(const std::filesystem::path& file, const std::map<std::string, std::string>& overrides) {
  json j = json::object();
  if (!file.empty()) j = read_json_file(file);
  if (!j.is_object()) throw ConfigError("configuration file " + file.string() + " must hold a JSON object");
  std::vector<std::string> problems;
  for (const auto& [field, text] : overrides) {
    try {
      j[field] = parse_override(field, text);
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& s : problems) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
  return config_from_json(j);
}

}  // namespace mgan
