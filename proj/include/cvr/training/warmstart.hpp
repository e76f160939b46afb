#pragma once

#include <string>
#include <vector>

#include "cvr/backbones/backbone.hpp"
#include "cvr/errors.hpp"
#include "cvr/training/checkpoint.hpp"
#include "cvr/training/model.hpp"
#include "cvr/training/run_config.hpp"

namespace cvr {

struct WarmstartReport {
  bool fingerprint_match = false;
  std::vector<std::string> copied;
  std::vector<std::string> reinitialized;
};

// Initializes a model for `schema` from a source checkpoint. Matching
// schemas copy every tensor. Otherwise the input projection is rebuilt from
// cfg.seed, embedding tables of new or resized features start fresh, and
// everything else must match the source by name and shape.
inline Model warmstart_load(const Checkpoint& source, const FeatureSchema& schema, const RunConfig& cfg,
                            const NormStats& fresh_stats, WarmstartReport* report = nullptr) {
  WarmstartReport rep;
  rep.fingerprint_match = source.model.schema.fingerprint() == schema.fingerprint();
  const Model& src = source.model;
  if (rep.fingerprint_match) {
    Model m{schema, cfg.backbone, cfg.mmoe, src.stats, src.params};
    if (!(cfg.backbone == src.backbone) || !(cfg.mmoe == src.mmoe))
      throw IncompatibleCheckpointError("warmstart: architecture differs from the source checkpoint");
    rep.copied = src.params.names();
    if (report) *report = std::move(rep);
    return m;
  }

  NormStats stats;
  for (const auto& spec : schema.specs()) {
    if (spec.kind != FeatureKind::kNumerical) continue;
    const auto j = src.schema.find(spec.name);
    const bool carried = j && src.schema[*j].kind == FeatureKind::kNumerical && src.stats.features.count(spec.name);
    stats.features[spec.name] = carried ? src.stats.at(spec.name) : fresh_stats.at(spec.name);
  }
  Model m = init_model(schema, cfg.backbone, cfg.mmoe, std::move(stats), cfg.seed);
  const std::string projection = input_prefix(cfg.backbone) + "/";
  for (auto& [name, t] : m.params.tensors()) {
    const bool is_projection = name.starts_with(projection);
    const bool is_table = name.starts_with("embed/");
    const bool in_source = src.params.contains(name);
    if (is_projection || (is_table && (!in_source || src.params.at(name).shape != t.shape))) {
      rep.reinitialized.push_back(name);
      continue;
    }
    if (!in_source) throw IncompatibleCheckpointError("warmstart: source checkpoint lacks '" + name + "'");
    if (src.params.at(name).shape != t.shape)
      throw IncompatibleCheckpointError("warmstart: '" + name + "' has shape " + shape_str(src.params.at(name).shape) +
                                        " in the source but " + shape_str(t.shape) + " in the new model");
    rep.copied.push_back(name);
  }
  for (const auto& name : src.params.names())
    if (!m.params.contains(name) && !name.starts_with("embed/") && !name.starts_with(projection))
      throw IncompatibleCheckpointError("warmstart: new model has no '" + name + "'");
  for (const auto& name : rep.copied) m.params.at(name) = src.params.at(name);
  if (report) *report = std::move(rep);
  return m;
}

}  // namespace cvr
