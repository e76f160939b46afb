#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvr/backbones/backbone.hpp"
#include "cvr/backbones/config.hpp"
#include "cvr/features/encode.hpp"
#include "cvr/features/schema.hpp"
#include "cvr/multitask/mmoe.hpp"
#include "cvr/numerics/graph.hpp"
#include "cvr/numerics/params.hpp"
#include "cvr/training/dataset.hpp"

namespace cvr {

// Everything needed to score a record: schema, architecture, normalization
// statistics and every trainable tensor (embedding tables included).
struct Model {
  FeatureSchema schema;
  BackboneConfig backbone;
  MmoeConfig mmoe;
  NormStats stats;
  ParamStore params;
};

inline void init_embeddings(ParamStore& s, const FeatureSchema& schema, std::uint64_t seed) {
  for (const auto& spec : schema.specs())
    if (spec.embedded()) s.set(table_param_name(spec.name), init_table(spec, seed));
}

inline Model init_model(const FeatureSchema& schema, const BackboneConfig& backbone, const MmoeConfig& mmoe,
                        NormStats stats, std::uint64_t seed) {
  validate(backbone);
  mmoe.validate();
  Model m{schema, backbone, mmoe, std::move(stats), {}};
  init_embeddings(m.params, schema, seed);
  init_backbone(m.params, backbone, schema.input_width(), seed);
  init_mmoe(m.params, mmoe, hidden_width(backbone), seed);
  return m;
}

// Per-task logits, each [B x 1], for a batch of encoded items.
inline MmoeOutput model_forward(ParamBinder& p, const Model& m, std::span<const EncodedItem* const> items) {
  std::vector<Var> tables;
  for (const auto& spec : m.schema.specs())
    if (spec.embedded()) tables.push_back(p(table_param_name(spec.name)));
  Var x0 = assemble_batch(p.graph(), m.schema, tables, items);
  return mmoe_forward(p, m.mmoe, backbone_forward(p, m.backbone, x0));
}

// Primary-task logits for arbitrary item lists, evaluated in chunks of at most
// `chunk` items. Rows are independent, so chunking never changes a score.
inline std::vector<double> score_items(const Model& m, std::span<const EncodedItem* const> items,
                                       std::size_t chunk = 512) {
  std::vector<double> out;
  out.reserve(items.size());
  const std::size_t task = m.mmoe.primary_index();
  for (std::size_t b = 0; b < items.size(); b += chunk) {
    const std::size_t n = std::min(chunk, items.size() - b);
    Graph g;
    ParamBinder p(g, m.params, false);
    const auto outs = model_forward(p, m, items.subspan(b, n));
    const auto& v = g.value(outs.logits[task]);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// Primary-task logits per group.
inline std::vector<std::vector<double>> score_groups(const Model& m, std::span<const EncodedGroup> groups,
                                                     std::size_t chunk = 512) {
  std::vector<const EncodedItem*> flat;
  for (const auto& g : groups)
    for (const auto& it : g.items) flat.push_back(&it);
  const auto scores = score_items(m, flat, chunk);
  std::vector<std::vector<double>> out;
  out.reserve(groups.size());
  std::size_t k = 0;
  for (const auto& g : groups) {
    out.emplace_back(scores.begin() + static_cast<std::ptrdiff_t>(k),
                     scores.begin() + static_cast<std::ptrdiff_t>(k + g.items.size()));
    k += g.items.size();
  }
  return out;
}

}  // namespace cvr
