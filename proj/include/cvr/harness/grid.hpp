#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvr/errors.hpp"
#include "cvr/harness/experiment.hpp"
#include "cvr/harness/stats.hpp"

namespace cvr {

// One-axis sweep over a scaling factor (backbone factor, or embed_dim /
// vocab_size applied to every embedded feature).
struct GridSpec {
  RunConfig base;
  std::string factor;
  std::vector<std::size_t> values;
  std::optional<std::size_t> base_value;  // defaults to the base config's own value
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output;

  void validate() const {
    base.validate();
    const auto names = scaling_factors(base.backbone);
    if (!is_embedding_factor(factor) && std::find(names.begin(), names.end(), factor) == names.end())
      throw ConfigError("grid: '" + factor + "' is not a scaling factor of " + base.backbone.family());
    if (values.empty()) throw ConfigError("grid: no factor values");
    if (seeds.empty()) throw ConfigError("grid: no replicate seeds");
  }
};

inline std::size_t factor_value(const RunConfig& cfg, const FeatureSchema& schema, const std::string& factor) {
  if (is_embedding_factor(factor)) {
    for (const auto& s : schema.specs())
      if (s.embedded()) return factor == "embed_dim" ? s.embed_dim : static_cast<std::size_t>(s.vocab_size);
    throw ConfigError("grid: schema has no embedded feature for '" + factor + "'");
  }
  const auto j = to_json(cfg.backbone);
  if (!j.contains(factor)) throw ConfigError("grid: backbone has no factor '" + factor + "'");
  return j.at(factor).get<std::size_t>();
}

// Config and schema of one grid cell.
inline std::pair<RunConfig, FeatureSchema> grid_cell(const GridSpec& g, const FeatureSchema& schema, std::size_t value,
                                                     std::uint64_t seed) {
  RunConfig cfg = g.base;
  cfg.seed = seed;
  if (is_embedding_factor(g.factor)) return {cfg, scale_embeddings(schema, g.factor, value)};
  cfg.backbone = with_factor(cfg.backbone, g.factor, value);
  return {cfg, schema};
}

inline nlohmann::json to_json(const GridSpec& g) {
  nlohmann::json j{{"base", to_json(g.base)}, {"factor", g.factor}, {"values", g.values}, {"seeds", g.seeds}};
  j["base_value"] = g.base_value ? nlohmann::json(*g.base_value) : nlohmann::json(nullptr);
  return j;
}

inline GridSpec grid_spec_from_json(const nlohmann::json& j) {
  try {
    GridSpec g;
    if (j.contains("base")) g.base = run_config_from_json(j.at("base"));
    g.factor = j.at("factor").get<std::string>();
    g.values = j.at("values").get<std::vector<std::size_t>>();
    if (j.contains("base_value") && !j.at("base_value").is_null()) g.base_value = j.at("base_value").get<std::size_t>();
    if (j.contains("seeds")) g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    g.output = j.value("output", std::string());
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grid spec: ") + e.what());
  }
}

struct GridRow {
  std::size_t value = 0;
  bool is_base = false;
  bool failed = false;
  std::string status = "ok";
  MeanStd map;
  MeanStd groups_per_sec;
  double delta_map_pct = 0.0;
  double delta_throughput_pct = 0.0;
  std::uint64_t inference_flops = 0;
  std::vector<CellResult> cells;
};

struct GridReport {
  std::string factor;
  std::string config_digest;  // grid spec plus dataset digests
  std::vector<GridRow> rows;
};

using CellRunner = std::function<CellResult(const RunConfig&, const FeatureSchema&)>;

// Runs every (value, seed) cell; rows follow `values`, with the base value
// inserted first when absent. A failing cell marks its row failed and the
// grid continues.
inline GridReport run_grid(const GridSpec& g, const ExperimentData& data, const CellRunner& runner = {}) {
  g.validate();
  const FeatureSchema& schema = data.train.schema;
  const std::size_t base_value = g.base_value.value_or(factor_value(g.base, schema, g.factor));
  std::vector<std::size_t> values = g.values;
  if (std::find(values.begin(), values.end(), base_value) == values.end()) values.insert(values.begin(), base_value);
  auto run = runner ? runner : [&](const RunConfig& c, const FeatureSchema& s) { return run_cell(c, data, s); };

  GridReport rep;
  rep.factor = g.factor;
  auto digest_doc = to_json(g);
  digest_doc["train_digest"] = data.train_digest;
  digest_doc["eval_digest"] = data.eval_digest;
  rep.config_digest = config_digest(digest_doc);
  for (std::size_t v : values) {
    GridRow row;
    row.value = v;
    row.is_base = v == base_value;
    try {
      std::vector<double> maps, gps;
      for (auto seed : g.seeds) {
        const auto [cfg, cell_schema] = grid_cell(g, schema, v, seed);
        row.cells.push_back(run(cfg, cell_schema));
        maps.push_back(row.cells.back().map);
        gps.push_back(row.cells.back().groups_per_sec);
        row.inference_flops = row.cells.back().inference_flops;
      }
      row.map = mean_std(maps);
      row.groups_per_sec = mean_std(gps);
    } catch (const std::exception& e) {
      row.failed = true;
      row.status = std::string("failed: ") + e.what();
    }
    rep.rows.push_back(std::move(row));
  }
  const auto base = std::find_if(rep.rows.begin(), rep.rows.end(), [](const GridRow& r) { return r.is_base; });
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& r : rep.rows) {
    if (r.is_base && !r.failed) continue;  // 0.00% by construction
    if (r.failed || base->failed) {
      r.delta_map_pct = r.delta_throughput_pct = nan;
      continue;
    }
    r.delta_map_pct = 100.0 * (r.map.mean - base->map.mean) / base->map.mean;
    r.delta_throughput_pct = 100.0 * (r.groups_per_sec.mean - base->groups_per_sec.mean) / base->groups_per_sec.mean;
  }
  return rep;
}

// Timing columns vary run to run; without them the report is byte-stable.
inline void write_grid_csv(std::ostream& os, const GridReport& rep, bool include_timing) {
  write_digest_header(os, rep.config_digest);
  os << "factor,value,base,map_mean,map_std,delta_map";
  if (include_timing) os << ",groups_per_sec,delta_throughput";
  os << ",inference_flops,status\n";
  for (const auto& r : rep.rows) {
    os << rep.factor << ',' << r.value << ',' << (r.is_base ? 1 : 0) << ',' << format_fixed(r.map.mean, 6) << ','
       << format_fixed(r.map.std, 6) << ',' << format_percent_delta(r.delta_map_pct);
    if (include_timing)
      os << ',' << format_fixed(r.groups_per_sec.mean, 1) << ',' << format_percent_delta(r.delta_throughput_pct);
    os << ',' << r.inference_flops << ',' << csv_cell(r.status) << '\n';
  }
}

}  // namespace cvr
