#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "matchinggan/evaluation.hpp"

// Ablation grids: a K1 x K2 accuracy grid (train with K1 conditionals,
// generate with K2) and one-factor setting sweeps reporting accuracy, FID and
// IS per row.
//
// Spec file, every key optional:
//   {
//     "base": {<TrainConfig fields>},
//     "k1": [3, 5, 7, 9], "k2": [3, 5, 7, 9],
//     "lambda_r": [...], "lambda_m": [...], "coefficient_mode": [...],
//     "shared_encoder": [...], "skip_connections": [...],
//     "protocol": {"shots", "generated_per_category", "fid_count", "seed",
//                  "backbone_epochs", "backbone_channels", "head_steps"}
//   }

namespace mgan {

struct AblationProtocol {
  int shots = 10;
  int generated_per_category = 512;
  int fid_count = 128;
  std::uint64_t seed = 0;
  int backbone_epochs = 8;
  std::vector<int> backbone_channels{16, 32, 64};
  int head_steps = 300;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AblationProtocol, shots, generated_per_category, fid_count, seed,
                                                backbone_epochs, backbone_channels, head_steps)

struct AblationSpec {
  json base = json::object();
  std::vector<int> k1, k2;
  std::vector<double> lambda_r;
  std::vector<double> lambda_m;
  std::vector<std::string> coefficient_mode;
  std::vector<bool> shared_encoder;
  std::vector<int> skip_connections;
  AblationProtocol protocol;

  bool has_k_grid() const { return !k1.empty() && !k2.empty(); }
};

inline AblationSpec ablation_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("ablation spec must be a JSON object");
  static const std::vector<std::string> known{"base", "k1", "k2", "lambda_r", "lambda_m", "coefficient_mode",
                                              "shared_encoder", "skip_connections", "protocol"};
  std::vector<std::string> problems;
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) problems.push_back("unknown field '" + key + "'");
  AblationSpec s;
  try {
    s.base = j.value("base", json::object());
    s.k1 = j.value("k1", std::vector<int>{});
    s.k2 = j.value("k2", std::vector<int>{});
    s.lambda_r = j.value("lambda_r", std::vector<double>{});
    s.lambda_m = j.value("lambda_m", std::vector<double>{});
    s.coefficient_mode = j.value("coefficient_mode", std::vector<std::string>{});
    s.shared_encoder = j.value("shared_encoder", std::vector<bool>{});
    s.skip_connections = j.value("skip_connections", std::vector<int>{});
    if (j.contains("protocol")) {
      const json defaults = AblationProtocol{};
      for (const auto& [key, _] : j.at("protocol").items())
        if (!defaults.contains(key)) problems.push_back("unknown protocol field '" + key + "'");
      s.protocol = j.at("protocol").get<AblationProtocol>();
    }
  } catch (const json::exception& e) {
    problems.push_back(e.what());
  }
  if (s.k1.empty() != s.k2.empty()) problems.push_back("k1 and k2 must both be given for a K grid");
  try {
    config_from_json(s.base);
  } catch (const ConfigError& e) {
    problems.push_back(std::string("base: ") + e.what());
  }
  if (!problems.empty()) {
    std::string msg = "invalid ablation spec:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
  return s;
}

struct SettingRow {
  std::string label;
  json overrides;
};

namespace ablation_detail {

inline std::string number_label(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace ablation_detail

// Rows in the fixed group order lambda_r, lambda_m, coefficients, encoder,
// connections; values in spec order.
inline std::vector<SettingRow> setting_rows(const AblationSpec& s) {
  std::vector<SettingRow> rows;
  for (double v : s.lambda_r) rows.push_back({"λ_r=" + ablation_detail::number_label(v), {{"lambda_r", v}}});
  for (double v : s.lambda_m) rows.push_back({"λ_m=" + ablation_detail::number_label(v), {{"lambda_m", v}}});
  for (const auto& v : s.coefficient_mode)
    rows.push_back({v == "matched" ? "matching coefficient" : v + " coefficient", {{"coefficient_mode", v}}});
  for (bool v : s.shared_encoder)
    rows.push_back({v ? "shared encoder" : "different encoder", {{"shared_encoder", v}}});
  for (int v : s.skip_connections)
    rows.push_back({std::to_string(v) + " connection", {{"skip_connections", v}}});
  return rows;
}

struct AblationCell {
  std::string row;     // "K2=5" or a setting label
  std::string column;  // "K1=3", or "" for setting rows
  std::vector<MetricReport> metrics;
};

struct AblationResult {
  std::vector<int> k1, k2;
  std::vector<AblationCell> grid;      // K2-major, K1 inner: the table's reading order
  std::vector<AblationCell> settings;  // one per setting row

  std::vector<MetricReport> reports() const {
    std::vector<MetricReport> out;
    for (const auto* cells : {&grid, &settings})
      for (const auto& c : *cells) out.insert(out.end(), c.metrics.begin(), c.metrics.end());
    return out;
  }
};

// Trains one configuration and returns its generator. The default trains with
// the Trainer; tests substitute cheaper fakes.
using TrainFn = std::function<std::unique_ptr<MatchingGenerator<float>>(const TrainConfig&, const std::string& run_id)>;

class AblationRunner {
 public:
  AblationRunner(const ImageStore& store, CategorySplit split, TrainFn train, const EvalBackbone& backbone)
      : store_(&store), split_(std::move(split)), train_(std::move(train)), backbone_(&backbone) {}

  AblationResult run(const AblationSpec& spec) {
    AblationResult out;
    out.k1 = spec.k1;
    out.k2 = spec.k2;
    const auto& p = spec.protocol;
    if (spec.has_k_grid()) {
      for (int k2 : spec.k2)
        for (int k1 : spec.k1) {
          AblationCell cell{"K2=" + std::to_string(k2), "K1=" + std::to_string(k1), {}};
          json cfg = spec.base;
          cfg["k"] = k1;
          const std::string id = "k1=" + std::to_string(k1) + ",k2=" + std::to_string(k2);
          cell.metrics.push_back(evaluate(id, "accuracy", cfg, p, k2, [&](const MatchingGenerator<float>& g, json& proto) {
            return lowdata(g, p, k2, proto);
          }));
          out.grid.push_back(std::move(cell));
        }
    }
    for (const auto& row : setting_rows(spec)) {
      json cfg = spec.base;
      for (const auto& [k, v] : row.overrides.items()) cfg[k] = v;
      AblationCell cell{row.label, "", {}};
      int k = 3;
      try {
        k = config_from_json(cfg).k;
      } catch (const ConfigError&) {
      }
      cell.metrics.push_back(evaluate(row.label, "accuracy", cfg, p, k, [&](const MatchingGenerator<float>& g, json& proto) {
        return lowdata(g, p, k, proto);
      }));
      std::optional<FidIsResult> fi;
      auto fid_is = [&](const MatchingGenerator<float>& g, json& proto) {
        proto["count"] = p.fid_count;
        if (!fi) fi = fid_is_protocol(g, *store_, split_.unseen, *backbone_, {p.fid_count, k, p.seed, 32}, {p.head_steps, 1e-2});
        return fi->fid;
      };
      cell.metrics.push_back(evaluate(row.label, "fid", cfg, p, k, fid_is));
      cell.metrics.push_back(evaluate(row.label, "is", cfg, p, k, [&](const MatchingGenerator<float>& g, json& proto) {
        fid_is(g, proto);
        return fi->inception_score;
      }));
      out.settings.push_back(std::move(cell));
    }
    return out;
  }

  int trainings() const { return static_cast<int>(trained_.size()); }

 private:
  using Metric = std::function<double(const MatchingGenerator<float>&, json&)>;

  MetricReport evaluate(const std::string& id, const std::string& metric, const json& cfg_json,
                        const AblationProtocol& p, int k2, const Metric& fn) {
    MetricReport r;
    r.run_id = id;
    r.metric = metric;
    r.protocol = {{"K2", k2}, {"shots", p.shots}, {"seed", p.seed}, {"categories", split_.unseen.size()}};
    try {
      const auto cfg = config_from_json(cfg_json);
      r.protocol["config"] = cfg;
      r.value = fn(generator_for(cfg), r.protocol);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    return r;
  }

  // Identical configurations share one training run.
  const MatchingGenerator<float>& generator_for(const TrainConfig& cfg) {
    const std::string key = json(cfg).dump();
    auto it = trained_.find(key);
    if (it == trained_.end()) {
      auto failed = failures_.find(key);
      if (failed != failures_.end()) throw TrainingError(failed->second);
      try {
        it = trained_.emplace(key, train_(cfg, "run" + std::to_string(trained_.size() + failures_.size()))).first;
      } catch (const std::exception& e) {
        failures_[key] = e.what();
        throw;
      }
    }
    return *it->second;
  }

  double lowdata(const MatchingGenerator<float>& g, const AblationProtocol& p, int k2, json& proto) {
    LowDataOptions lo;
    lo.shots = p.shots;
    lo.augment = true;
    lo.generated_per_category = p.generated_per_category;
    lo.k2 = k2;
    lo.seed = p.seed;
    lo.head.steps = p.head_steps;
    proto["generated_per_category"] = p.generated_per_category;
    return lowdata_protocol(&g, *store_, split_.unseen, *backbone_, lo).accuracy;
  }

  const ImageStore* store_;
  CategorySplit split_;
  TrainFn train_;
  const EvalBackbone* backbone_;
  std::map<std::string, std::unique_ptr<MatchingGenerator<float>>> trained_;
  std::map<std::string, std::string> failures_;
};

namespace ablation_detail {

inline std::string cell_text(const MetricReport& r, bool percent) {
  if (r.failed()) return "failed";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", percent ? 100 * r.value : r.value);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t w) {
  // Display width counts code points, so labels with Greek letters align.
  std::size_t cps = 0;
  for (unsigned char ch : s) cps += (ch & 0xC0) != 0x80;
  return s + std::string(w > cps ? w - cps : 0, ' ');
}

inline std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      std::size_t cps = 0;
      for (unsigned char ch : r[c]) cps += (ch & 0xC0) != 0x80;
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], cps);
    }
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += "|";
    for (std::size_t c = 0; c < rows[i].size(); ++c) out += " " + pad(rows[i][c], width[c]) + " |";
    out += "\n";
    if (i == 0) {
      out += "|";
      for (auto w : width) out += std::string(w + 2, '-') + "|";
      out += "\n";
    }
  }
  return out;
}

}  // namespace ablation_detail

// Accuracy (%) with K2 rows and K1 columns.
inline std::string render_k_table(const AblationResult& r) {
  if (r.grid.empty()) return "";
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{""};
  for (int k1 : r.k1) head.push_back("K1=" + std::to_string(k1));
  rows.push_back(head);
  std::size_t at = 0;
  for (int k2 : r.k2) {
    std::vector<std::string> row{"K2=" + std::to_string(k2)};
    for (std::size_t c = 0; c < r.k1.size(); ++c) row.push_back(ablation_detail::cell_text(r.grid[at++].metrics[0], true));
    rows.push_back(row);
  }
  return ablation_detail::render(rows);
}

// setting | accuracy (%) | FID | IS
inline std::string render_settings_table(const AblationResult& r) {
  if (r.settings.empty()) return "";
  std::vector<std::vector<std::string>> rows{{"setting", "accuracy", "FID (↓)", "IS (↑)"}};
  for (const auto& c : r.settings)
    rows.push_back({c.row, ablation_detail::cell_text(c.metrics[0], true), ablation_detail::cell_text(c.metrics[1], false),
                    ablation_detail::cell_text(c.metrics[2], false)});
  return ablation_detail::render(rows);
}

}  // namespace mgan
