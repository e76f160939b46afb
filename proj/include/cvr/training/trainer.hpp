#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cvr/backbones/flops.hpp"
#include "cvr/errors.hpp"
#include "cvr/numerics/optim.hpp"
#include "cvr/numerics/rng.hpp"
#include "cvr/training/checkpoint.hpp"
#include "cvr/training/dataset.hpp"
#include "cvr/training/loss.hpp"
#include "cvr/training/model.hpp"
#include "cvr/training/run_config.hpp"

namespace cvr {

struct MetricsRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  std::vector<double> task_losses;
  double groups_per_sec = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> log;
  std::uint64_t steps = 0;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  std::string dataset_digest;
  std::function<void(const MetricsRow&)> on_log;
};

// Adam over every tensor of a model in name order.
class ModelOptimizer {
 public:
  explicit ModelOptimizer(Model& m) : model_(m) {
    for (auto& [name, t] : m.params.tensors()) {
      names_.push_back(name);
      tensors_.push_back(&t);
      zeros_.emplace_back(t.numel(), 0.0);
    }
  }

  struct StepLoss {
    double total = 0.0;
    std::vector<double> tasks;
  };

  // Forward, backward and one Adam update on a batch of groups.
  StepLoss step(std::span<const EncodedGroup* const> batch, double lr) {
    std::vector<const EncodedItem*> items;
    std::vector<std::size_t> offsets{0};
    const std::size_t n_tasks = model_.mmoe.tasks.size();
    std::vector<std::vector<double>> labels(n_tasks);
    for (const EncodedGroup* g : batch) {
      for (const auto& it : g->items) items.push_back(&it);
      offsets.push_back(items.size());
      for (std::size_t t = 0; t < n_tasks; ++t) labels[t].insert(labels[t].end(), g->labels[t].begin(), g->labels[t].end());
    }
    Graph g;
    ParamBinder p(g, model_.params, true);
    StepLoss loss;
    Var total;
    try {
      const auto out = model_forward(p, model_, items);
      for (std::size_t t = 0; t < n_tasks; ++t) {
        Var lt = listwise_loss(out.logits[t], offsets, std::move(labels[t]));
        loss.tasks.push_back(g.item(lt));
        total = t == 0 ? lt : add(total, lt);
      }
      loss.total = g.item(total);
    } catch (const NumericError& e) {
      throw NumericError(locate_non_finite(batch) + " (" + e.what() + ")");
    }
    if (!std::isfinite(loss.total)) throw NumericError(locate_non_finite(batch));
    g.backward(total);
    std::vector<const std::vector<double>*> grads;
    grads.reserve(names_.size());
    for (std::size_t i = 0; i < names_.size(); ++i) {
      auto it = p.bound().find(names_[i]);
      const auto* grad = it == p.bound().end() ? nullptr : &g.node(it->second).grad;
      grads.push_back(grad == nullptr || grad->empty() ? &zeros_[i] : grad);
    }
    adam_step(tensors_, grads, state_, lr);
    return loss;
  }

 private:
  // Replays the batch one group at a time to name the first offending group.
  std::string locate_non_finite(std::span<const EncodedGroup* const> batch) const {
    for (const EncodedGroup* grp : batch) {
      bool bad = false;
      try {
        std::vector<const EncodedItem*> items;
        for (const auto& it : grp->items) items.push_back(&it);
        Graph g;
        ParamBinder p(g, model_.params, false);
        const auto out = model_forward(p, model_, items);
        for (std::size_t t = 0; t < out.logits.size() && !bad; ++t)
          bad = !std::isfinite(listwise_loss(g.value(out.logits[t]), grp->labels[t]));
      } catch (const NumericError&) {
        bad = true;
      }
      if (bad) return "non-finite loss in group " + std::to_string(grp->query_id);
    }
    return "non-finite total loss in batch starting at group " + std::to_string(batch.front()->query_id);
  }

  Model& model_;
  std::vector<std::string> names_;
  std::vector<Tensor*> tensors_;
  std::vector<std::vector<double>> zeros_;
  AdamState state_;
};

inline std::uint64_t steps_per_epoch(std::size_t groups, std::size_t batch) { return (groups + batch - 1) / batch; }

// Statistics from the data, fresh parameters from the seed.
inline Model init_model_for(const RunConfig& cfg, const Dataset& data) {
  return init_model(data.schema, cfg.backbone, cfg.mmoe, compute_norm_stats(data.schema, all_records(data, data.schema)),
                    cfg.seed);
}

// Trains `init` (or a fresh model) for cfg.epochs over `data`. Each epoch
// visits the groups in a seeded shuffle, cfg.batch_groups per step.
inline TrainResult train(const RunConfig& cfg, const Dataset& data, std::optional<Model> init = std::nullopt,
                         const TrainOptions& opts = {}) {
  cfg.validate();
  Model model = init ? std::move(*init) : init_model_for(cfg, data);
  if (model.mmoe.tasks != cfg.mmoe.tasks) throw ConfigError("train: model tasks differ from run config");
  const std::size_t primary = data.task_index(cfg.mmoe.primary_task);
  for (const auto& g : data.groups) validate_group(g, data.tasks.size(), primary);
  const auto encoded = encode_groups(data, model.schema, model.stats, cfg.mmoe.tasks);

  const std::uint64_t per_epoch = encoded.empty() ? 0 : steps_per_epoch(encoded.size(), cfg.batch_groups);
  const std::uint64_t total = per_epoch * cfg.epochs;
  const LrSchedule sched = cfg.lr_schedule(total);
  ModelOptimizer opt(model);
  TrainResult res;
  const SplitMix64 shuffle_root = SplitMix64(cfg.seed).derive("epoch-shuffle");
  std::vector<std::size_t> order(encoded.size());
  std::vector<const EncodedGroup*> batch;

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  auto interval_start = t0;
  std::size_t interval_groups = 0, interval_steps = 0;
  MetricsRow acc;
  acc.task_losses.assign(cfg.mmoe.tasks.size(), 0.0);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng = shuffle_root.derive(epoch);
    rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_groups) {
      batch.clear();
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_groups); ++k) batch.push_back(&encoded[order[k]]);
      const double lr = lr_at(sched, step + 1);
      const auto loss = opt.step(batch, lr);
      ++step;
      acc.loss_total += loss.total;
      for (std::size_t t = 0; t < loss.tasks.size(); ++t) acc.task_losses[t] += loss.tasks[t];
      interval_groups += batch.size();
      ++interval_steps;
      if (step % cfg.log_every == 0 || step == total) {
        const auto now = Clock::now();
        const double secs = std::chrono::duration<double>(now - interval_start).count();
        MetricsRow row;
        row.step = step;
        row.lr = lr;
        row.loss_total = acc.loss_total / static_cast<double>(interval_steps);
        for (double l : acc.task_losses) row.task_losses.push_back(l / static_cast<double>(interval_steps));
        row.groups_per_sec = secs > 0.0 ? static_cast<double>(interval_groups) / secs : 0.0;
        if (opts.on_log) opts.on_log(row);
        res.log.push_back(std::move(row));
        acc.loss_total = 0.0;
        std::fill(acc.task_losses.begin(), acc.task_losses.end(), 0.0);
        interval_groups = interval_steps = 0;
        interval_start = now;
      }
    }
  }
  res.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  res.steps = step;
  res.checkpoint.model = std::move(model);
  res.checkpoint.run_config = to_json(cfg);
  res.checkpoint.config_digest = config_digest(cfg);
  res.checkpoint.metadata = {{"steps", step}, {"seed", cfg.seed}, {"dataset_digest", opts.dataset_digest}};
  return res;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<std::string>& tasks,
                              const std::vector<MetricsRow>& rows) {
  os << "step,lr,loss_total";
  for (const auto& t : tasks) os << ",loss_" << t;
  os << ",groups_per_sec\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    os << r.step << ',' << num(r.lr) << ',' << num(r.loss_total);
    for (double l : r.task_losses) os << ',' << num(l);
    os << ',' << num(r.groups_per_sec) << '\n';
  }
}

struct Throughput {
  double groups_per_sec = 0.0;
  double flops_per_sec = 0.0;
  std::uint64_t measured_steps = 0;
};

// Times `steps` training steps from a fresh model; the first 10% (at least
// one step) are warm-up and excluded.
inline Throughput measure_throughput(const RunConfig& cfg, const Dataset& data, std::uint64_t steps) {
  if (steps < 10)
    throw ContractError("measure_throughput: " + std::to_string(steps) + " steps leave no measurement after warm-up");
  if (data.groups.empty()) throw ContractError("measure_throughput: empty dataset");
  Model model = init_model_for(cfg, data);
  const auto encoded = encode_groups(data, model.schema, model.stats, cfg.mmoe.tasks);
  ModelOptimizer opt(model);
  const std::uint64_t warm = std::max<std::uint64_t>(1, steps / 10);
  std::vector<const EncodedGroup*> batch;
  std::size_t cursor = 0, groups = 0, items = 0;
  auto next_batch = [&] {
    batch.clear();
    for (std::size_t k = 0; k < cfg.batch_groups; ++k) {
      batch.push_back(&encoded[cursor]);
      cursor = (cursor + 1) % encoded.size();
    }
  };
  for (std::uint64_t s = 0; s < warm; ++s) {
    next_batch();
    opt.step(batch, cfg.schedule.lr_peak);
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t s = warm; s < steps; ++s) {
    next_batch();
    opt.step(batch, cfg.schedule.lr_peak);
    groups += batch.size();
    for (const auto* g : batch) items += g->items.size();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Throughput t;
  t.measured_steps = steps - warm;
  t.groups_per_sec = static_cast<double>(groups) / secs;
  const double avg_items = static_cast<double>(items) / static_cast<double>(groups);
  t.flops_per_sec =
      static_cast<double>(count_flops(cfg.backbone, model.schema.input_width())) * t.groups_per_sec * avg_items;
  return t;
}

}  // namespace cvr
