#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvr/backbones/flops.hpp"
#include "cvr/errors.hpp"
#include "cvr/evaluation/importance.hpp"
#include "cvr/synth/generate.hpp"
#include "cvr/synth/io.hpp"
#include "cvr/training/checkpoint.hpp"
#include "cvr/training/trainer.hpp"

namespace cvr {

// Training days and held-out evaluation days of one dataset.
struct ExperimentData {
  Dataset train;
  Dataset eval;
  std::string train_digest;
  std::string eval_digest;
};

inline ExperimentData split_experiment(const Dataset& all, std::size_t holdout_days) {
  auto [train, eval] = split_holdout(all, holdout_days);
  ExperimentData d{std::move(train), std::move(eval), {}, {}};
  d.train_digest = dataset_digest(d.train);
  d.eval_digest = dataset_digest(d.eval);
  return d;
}

// Embedding-size factors apply to every embedded feature of the schema.
inline bool is_embedding_factor(const std::string& factor) { return factor == "embed_dim" || factor == "vocab_size"; }

inline FeatureSchema scale_embeddings(const FeatureSchema& schema, const std::string& factor, std::size_t value) {
  if (!is_embedding_factor(factor)) throw ConfigError("'" + factor + "' is not an embedding factor");
  std::vector<FeatureSpec> specs = schema.specs();
  for (auto& s : specs) {
    if (!s.embedded()) continue;
    if (factor == "embed_dim")
      s.embed_dim = value;
    else
      s.vocab_size = value;
  }
  return FeatureSchema(std::move(specs));
}

inline Dataset with_schema(const Dataset& d, const FeatureSchema& schema) {
  return d.schema == schema ? d : project_dataset(d, schema);
}

struct CellResult {
  double map = 0.0;
  double groups_per_sec = 0.0;  // training throughput
  double wall_s = 0.0;
  std::uint64_t inference_flops = 0;  // per item
  std::string checkpoint_digest;
};

inline double evaluate_on(const Model& m, const Dataset& eval) {
  const auto groups = encode_groups(with_schema(eval, m.schema), m.schema, m.stats, m.mmoe.tasks);
  return evaluate_model(m, groups).map;
}

// Trains cfg on the (windowed) training days under `schema`, evaluates on the
// held-out days.
inline CellResult run_cell(const RunConfig& cfg, const ExperimentData& data, const FeatureSchema& schema) {
  const Dataset train_set =
      with_schema(cfg.window_days > 0 ? window(data.train, cfg.window_days) : data.train, schema);
  TrainOptions opts;
  opts.dataset_digest = dataset_digest(train_set);
  const auto res = train(cfg, train_set, std::nullopt, opts);
  CellResult c;
  c.map = evaluate_on(res.checkpoint.model, data.eval);
  c.wall_s = res.wall_seconds;
  c.groups_per_sec = res.wall_seconds > 0.0
                         ? static_cast<double>(cfg.epochs * train_set.groups.size()) / res.wall_seconds
                         : 0.0;
  c.inference_flops = count_flops(cfg.backbone, schema.input_width());
  c.checkpoint_digest = checkpoint_digest(res.checkpoint);
  return c;
}

}  // namespace cvr
