#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/evaluation/importance.hpp"
#include "cvr/harness/experiment.hpp"
#include "cvr/harness/stats.hpp"
#include "cvr/training/warmstart.hpp"

namespace cvr {

// ---------------------------------------------------------------------------
// Data-window sweep: mAP against the number of most recent training days.

struct DataSweepRow {
  std::size_t days = 0;
  std::vector<double> maps;  // per seed
  MeanStd map;
};

struct DataSweepReport {
  std::vector<DataSweepRow> rows;
  LogLinearFit fit;
};

inline DataSweepReport data_sweep(const RunConfig& base, const ExperimentData& data, const std::vector<std::size_t>& windows,
                                  const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ContractError("data sweep: no seeds");
  DataSweepReport rep;
  std::vector<std::pair<double, double>> points;
  for (std::size_t w : windows) {
    if (w < 1 || w > days_of(data.train).size())
      throw ContractError("data sweep: window of " + std::to_string(w) + " days is outside the training days");
    DataSweepRow row;
    row.days = w;
    for (auto seed : seeds) {
      RunConfig cfg = base;
      cfg.window_days = w;
      cfg.seed = seed;
      row.maps.push_back(run_cell(cfg, data, data.train.schema).map);
    }
    row.map = mean_std(row.maps);
    points.emplace_back(static_cast<double>(w), row.map.mean);
    rep.rows.push_back(std::move(row));
  }
  rep.fit = fit_loglinear(points);
  return rep;
}

inline void write_data_sweep_csv(std::ostream& os, const std::string& digest, const DataSweepReport& rep) {
  write_digest_header(os, digest);
  os << "# loglinear slope=" << format_fixed(rep.fit.slope, 6) << " intercept=" << format_fixed(rep.fit.intercept, 6)
     << " r2=" << format_fixed(rep.fit.r2, 6) << '\n';
  os << "days,map_mean,map_std,replicates\n";
  for (const auto& r : rep.rows)
    os << r.days << ',' << format_fixed(r.map.mean, 6) << ',' << format_fixed(r.map.std, 6) << ',' << r.map.n << '\n';
}

// ---------------------------------------------------------------------------
// Compound-scaling additivity: gains of data, backbone and embedding scaling
// alone and combined, all against one base run.

struct AdditivityArm {
  std::string name;  // data, backbone, embedding or combined
  std::string base_digest;
  double map = 0.0;
};

struct AdditivityRow {
  std::string name;
  double map = 0.0;
  double gain = 0.0;      // absolute mAP over base
  double gain_pct = 0.0;  // relative to base
};

struct AdditivityReport {
  double base_map = 0.0;
  std::vector<AdditivityRow> rows;  // data, backbone, embedding, combined
  double sum_individual = 0.0;
  double residual = 0.0;  // combined gain - sum of individual gains
  double max_individual = 0.0;
};

inline AdditivityReport additivity_report(const std::string& base_digest, double base_map,
                                          const std::vector<AdditivityArm>& arms) {
  static const std::vector<std::string> kNames{"data", "backbone", "embedding", "combined"};
  if (!(base_map > 0.0)) throw ContractError("additivity: base mAP must be > 0");
  AdditivityReport rep;
  rep.base_map = base_map;
  for (const auto& name : kNames) {
    const auto it = std::find_if(arms.begin(), arms.end(), [&](const AdditivityArm& a) { return a.name == name; });
    if (it == arms.end()) throw ContractError("additivity: missing run '" + name + "'");
    if (it->base_digest != base_digest) throw ContractError("additivity: run '" + name + "' has a different base");
    AdditivityRow row{name, it->map, it->map - base_map, 100.0 * (it->map - base_map) / base_map};
    if (name != "combined") {
      rep.sum_individual += row.gain;
      rep.max_individual = std::max(rep.max_individual, std::abs(row.gain));
    }
    rep.rows.push_back(row);
  }
  if (arms.size() != kNames.size()) throw ContractError("additivity: expected exactly four runs");
  rep.residual = rep.rows.back().gain - rep.sum_individual;
  return rep;
}

inline void write_additivity_csv(std::ostream& os, const std::string& digest, const AdditivityReport& rep) {
  write_digest_header(os, digest);
  os << "dimension,map,gain,gain_pct\n";
  os << "base," << format_fixed(rep.base_map, 6) << ",0.000000,0.00%\n";
  for (const auto& r : rep.rows)
    os << r.name << ',' << format_fixed(r.map, 6) << ',' << format_fixed(r.gain, 6) << ','
       << format_percent_delta(r.gain_pct) << '\n';
  os << "sum_individual,," << format_fixed(rep.sum_individual, 6) << ",\n";
  os << "residual,," << format_fixed(rep.residual, 6) << ",\n";
}

// The four runs of the additivity study: each dimension scaled alone, then
// all together, against a shared base.
struct AdditivityPlan {
  RunConfig base;  // base.window_days is the base data window
  std::size_t scaled_window = 16;
  std::string backbone_factor = "cross_width";
  std::size_t scaled_backbone = 256;
  std::size_t scaled_embed_dim = 16;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct AdditivityRuns {
  std::string base_digest;
  double base_map = 0.0;
  std::vector<AdditivityArm> arms;
};

inline AdditivityRuns run_additivity(const AdditivityPlan& plan, const ExperimentData& data) {
  const FeatureSchema& schema = data.train.schema;
  auto mean_map = [&](RunConfig cfg, const FeatureSchema& s) {
    std::vector<double> maps;
    for (auto seed : plan.seeds) {
      cfg.seed = seed;
      maps.push_back(run_cell(cfg, data, s).map);
    }
    return mean_std(maps).mean;
  };
  AdditivityRuns runs;
  nlohmann::json base_doc{{"base", to_json(plan.base)}, {"train", data.train_digest}, {"eval", data.eval_digest}};
  runs.base_digest = config_digest(base_doc);
  runs.base_map = mean_map(plan.base, schema);

  RunConfig data_cfg = plan.base;
  data_cfg.window_days = plan.scaled_window;
  RunConfig backbone_cfg = plan.base;
  backbone_cfg.backbone = with_factor(plan.base.backbone, plan.backbone_factor, plan.scaled_backbone);
  const FeatureSchema wide = scale_embeddings(schema, "embed_dim", plan.scaled_embed_dim);
  RunConfig combined = backbone_cfg;
  combined.window_days = plan.scaled_window;

  runs.arms.push_back({"data", runs.base_digest, mean_map(data_cfg, schema)});
  runs.arms.push_back({"backbone", runs.base_digest, mean_map(backbone_cfg, schema)});
  runs.arms.push_back({"embedding", runs.base_digest, mean_map(plan.base, wide)});
  runs.arms.push_back({"combined", runs.base_digest, mean_map(combined, wide)});
  return runs;
}

// ---------------------------------------------------------------------------
// Warmstart comparison: a model trained without one feature is warmstarted
// onto the full schema and fine-tuned, against training from scratch.

struct WarmstartComparison {
  double warm_map = 0.0;
  double scratch_map = 0.0;
  double warm_wall_s = 0.0;     // load + fine-tune
  double scratch_wall_s = 0.0;  // full training
  WarmstartReport transfer;
};

// The fine-tune may use its own peak learning rate: the reinitialized input
// projection has to be relearned within the shorter schedule.
inline WarmstartComparison warmstart_compare(const RunConfig& cfg, const ExperimentData& data,
                                             const std::string& new_feature, std::size_t warm_epochs,
                                             std::size_t scratch_epochs,
                                             std::optional<double> fine_tune_lr_peak = std::nullopt) {
  const FeatureSchema& full = data.train.schema;
  std::vector<FeatureSpec> reduced_specs;
  for (const auto& s : full.specs())
    if (s.name != new_feature) reduced_specs.push_back(s);
  if (reduced_specs.size() == full.size()) throw SchemaError("warmstart compare: unknown feature '" + new_feature + "'");
  const FeatureSchema reduced(reduced_specs);
  const Dataset train_set = cfg.window_days > 0 ? window(data.train, cfg.window_days) : data.train;

  const auto prior = train(cfg, project_dataset(train_set, reduced)).checkpoint;
  const std::string prior_bytes = serialize_checkpoint(prior);

  WarmstartComparison out;
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const auto fresh = compute_norm_stats(full, all_records(train_set, full));
  Model warm = warmstart_load(parse_checkpoint(prior_bytes), full, cfg, fresh, &out.transfer);
  RunConfig fine = cfg;
  fine.epochs = warm_epochs;
  if (fine_tune_lr_peak) fine.schedule.lr_peak = *fine_tune_lr_peak;
  const auto warm_res = train(fine, train_set, std::move(warm));
  out.warm_wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
  out.warm_map = evaluate_on(warm_res.checkpoint.model, data.eval);

  RunConfig scratch = cfg;
  scratch.epochs = scratch_epochs;
  const auto t1 = Clock::now();
  const auto scratch_res = train(scratch, train_set);
  out.scratch_wall_s = std::chrono::duration<double>(Clock::now() - t1).count();
  out.scratch_map = evaluate_on(scratch_res.checkpoint.model, data.eval);
  return out;
}

inline void write_warmstart_csv(std::ostream& os, const std::string& digest, const WarmstartComparison& c) {
  write_digest_header(os, digest);
  os << "run,map,wall_s\n";
  os << "warmstart," << format_fixed(c.warm_map, 6) << ',' << format_fixed(c.warm_wall_s, 3) << '\n';
  os << "scratch," << format_fixed(c.scratch_map, 6) << ',' << format_fixed(c.scratch_wall_s, 3) << '\n';
  os << "# reinitialized=";
  for (std::size_t i = 0; i < c.transfer.reinitialized.size(); ++i) os << (i ? ";" : "") << c.transfer.reinitialized[i];
  os << '\n';
}

// ---------------------------------------------------------------------------
// Permutation importance by feature category. First order shuffles each
// category alone; second order shuffles the anchor category together with
// each other category, and those pair drops are normalized into shares.

struct ImportanceCategory {
  std::string name;
  std::vector<std::string> features;
};

// Named groups for the synthetic schema; any other schema gets one category
// per feature and anchors on its first sequential feature.
inline std::pair<std::vector<ImportanceCategory>, std::string> default_categories(const FeatureSchema& schema) {
  const std::vector<ImportanceCategory> planted{{"engagement", {"qi_ctr"}},
                                                {"item", {"price", "brand", "title"}},
                                                {"relevance", {"rel_a", "rel_b"}},
                                                {"noise", {"noise"}},
                                                {"customer", {"history"}}};
  std::vector<ImportanceCategory> cats;
  std::vector<std::string> covered;
  for (const auto& c : planted) {
    ImportanceCategory kept{c.name, {}};
    for (const auto& f : c.features)
      if (schema.find(f)) kept.features.push_back(f);
    if (!kept.features.empty()) {
      covered.insert(covered.end(), kept.features.begin(), kept.features.end());
      cats.push_back(std::move(kept));
    }
  }
  for (const auto& s : schema.specs())
    if (std::find(covered.begin(), covered.end(), s.name) == covered.end()) cats.push_back({s.name, {s.name}});
  std::string anchor;
  if (schema.find("history")) {
    anchor = "customer";
  } else {
    for (const auto& s : schema.specs())
      if (s.kind == FeatureKind::kSequential) {
        anchor = s.name;
        break;
      }
  }
  return {cats, anchor};
}

struct ImportanceReport {
  MapSummary baseline;
  std::vector<std::pair<std::string, ImportanceResult>> first_order;
  std::string anchor;
  std::vector<std::pair<std::string, ImportanceResult>> second_order;
  NormalizedImportance normalized;  // of second-order drops, or first-order when there is no anchor
};

inline ImportanceReport importance_report(const Model& m, std::span<const EncodedGroup> groups,
                                          const std::vector<ImportanceCategory>& categories, const std::string& anchor,
                                          std::size_t n_repeats, std::uint64_t seed) {
  if (categories.empty()) throw ContractError("importance report: no categories");
  ImportanceReport rep;
  rep.baseline = evaluate_model(m, groups);
  rep.anchor = anchor;
  const ImportanceCategory* anchor_cat = nullptr;
  for (const auto& c : categories) {
    rep.first_order.emplace_back(c.name, perm_importance(m, groups, c.features, n_repeats, seed));
    if (c.name == anchor) anchor_cat = &c;
  }
  if (!anchor.empty() && anchor_cat == nullptr) throw SchemaError("importance report: unknown anchor '" + anchor + "'");
  std::vector<std::pair<std::string, double>> shares;
  if (anchor_cat) {
    for (const auto& c : categories) {
      if (&c == anchor_cat) continue;
      auto features = anchor_cat->features;
      features.insert(features.end(), c.features.begin(), c.features.end());
      rep.second_order.emplace_back(c.name, perm_importance(m, groups, features, n_repeats, seed));
      shares.emplace_back(c.name, rep.second_order.back().second.mean);
    }
  } else {
    for (const auto& [name, r] : rep.first_order) shares.emplace_back(name, r.mean);
  }
  rep.normalized = normalize_importance(shares);
  return rep;
}

// Evaluation report: metric rows, then the first- and second-order drop tables.
inline void write_evaluation_report(std::ostream& os, const std::string& digest, const ImportanceReport& rep) {
  write_digest_header(os, digest);
  write_metric_rows(os, rep.baseline);
  os << "\nfeature_set,order,mean_drop,se\n";
  for (const auto& [name, r] : rep.first_order)
    os << name << ",1," << format_metric(r.mean) << ',' << format_metric(r.se) << '\n';
  for (const auto& [name, r] : rep.second_order)
    os << rep.anchor << '+' << name << ",2," << format_metric(r.mean) << ',' << format_metric(r.se) << '\n';
}

}  // namespace cvr
