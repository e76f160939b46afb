// cvrbench: data synthesis, training, evaluation, experiment grids and
// serving benchmarks over the cvr library.

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvr/errors.hpp"
#include "cvr/harness/grid.hpp"
#include "cvr/harness/parallel.hpp"
#include "cvr/harness/stats.hpp"
#include "cvr/harness/studies.hpp"
#include "cvr/serving/client.hpp"
#include "cvr/serving/peak.hpp"
#include "cvr/serving/server.hpp"
#include "cvr/serving/simulate.hpp"
#include "cvr/synth/generate.hpp"
#include "cvr/synth/io.hpp"
#include "cvr/training/checkpoint.hpp"
#include "cvr/training/trainer.hpp"
#include "cvr/training/warmstart.hpp"

using namespace cvr;
using nlohmann::json;

namespace {

// Writes to `path`, or stdout when it is empty or "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw ConfigError("cannot open output " + path);
    }
  }
  std::ostream& os() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

struct DataOptions {
  std::string dir;
  std::size_t holdout_days = kCanonicalHoldoutDays;
};

void add_data_options(CLI::App* app, DataOptions& d) {
  app->add_option("--data", d.dir, "Dataset directory written by `synth`")->required();
  app->add_option("--holdout-days", d.holdout_days, "Trailing days held out for evaluation");
}

FeatureSchema load_schema(const std::string& path) { return FeatureSchema::parse(read_file_bytes(path)); }

// Dataset split into training and held-out days, projected onto the run
// config's schema when it names one.
ExperimentData load_experiment(const DataOptions& d, const RunConfig* cfg = nullptr) {
  auto loaded = load_dataset(d.dir);
  if (cfg && !cfg->schema_path.empty()) loaded.data = project_dataset(loaded.data, load_schema(cfg->schema_path));
  return split_experiment(loaded.data, d.holdout_days);
}

RunConfig load_config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

json experiment_doc(const ExperimentData& data) {
  return {{"train_digest", data.train_digest}, {"eval_digest", data.eval_digest}};
}

StageCost stage_cost_option(const std::string& s) { return s.empty() ? StageCost{} : parse_stage_cost(s); }

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  std::string spec_path;
  std::uint64_t seed = 7;
  std::size_t days = 0;
  std::size_t groups_per_day = 0;
};

int cmd_synth(const SynthOptions& o) {
  SynthSpec spec = o.spec_path.empty() ? canonical_spec(o.seed)
                                       : synth_spec_from_json(json::parse(read_file_bytes(o.spec_path)));
  if (o.days) spec.n_days = o.days;
  if (o.groups_per_day) spec.groups_per_day = o.groups_per_day;
  const Dataset d = generate(spec);
  write_dataset(d, o.out, spec);
  std::cout << "wrote " << d.groups.size() << " groups over " << spec.n_days << " days to " << o.out
            << " (digest " << dataset_digest(d) << ")\n";
  return 0;
}

struct TrainCliOptions {
  std::string config;
  DataOptions data;
  std::string checkpoint;
  std::string metrics;
};

int cmd_train(const TrainCliOptions& o) {
  const RunConfig cfg = load_config_or_default(o.config);
  const auto data = load_experiment(o.data, &cfg);
  const Dataset train_set = cfg.window_days > 0 ? window(data.train, cfg.window_days) : data.train;
  std::optional<Model> init;
  if (cfg.warmstart_from) {
    WarmstartReport rep;
    const auto stats = compute_norm_stats(train_set.schema, all_records(train_set, train_set.schema));
    init = warmstart_load(load_checkpoint(*cfg.warmstart_from), train_set.schema, cfg, stats, &rep);
    std::cerr << "warmstart: copied " << rep.copied.size() << " tensors, reinitialized " << rep.reinitialized.size()
              << '\n';
  }
  TrainOptions opts;
  opts.dataset_digest = dataset_digest(train_set);
  const auto res = train(cfg, train_set, std::move(init), opts);
  save_checkpoint(res.checkpoint, o.checkpoint);
  if (!o.metrics.empty()) {
    Output out(o.metrics);
    write_digest_header(out.os(), config_digest(cfg));
    write_metrics_csv(out.os(), cfg.mmoe.tasks, res.log);
  }
  std::cout << "trained " << res.steps << " steps in " << format_fixed(res.wall_seconds, 2) << " s; checkpoint "
            << o.checkpoint << " digest " << checkpoint_digest(res.checkpoint) << '\n';
  return 0;
}

struct EvalOptions {
  std::string checkpoint;
  DataOptions data;
  std::string out;
};

int cmd_eval(const EvalOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const auto data = load_experiment(o.data);
  const Model& m = ckpt.model;
  const auto groups = encode_groups(with_schema(data.eval, m.schema), m.schema, m.stats, m.mmoe.tasks);
  const auto summary = evaluate_model(m, groups);
  Output out(o.out);
  write_digest_header(out.os(), config_digest(json{{"checkpoint", checkpoint_digest(ckpt)}, {"eval", data.eval_digest}}));
  write_metric_rows(out.os(), summary);
  return 0;
}

struct ImportanceOptions {
  std::string checkpoint;
  DataOptions data;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  std::string anchor;
  std::string out;
  std::string table_out;
};

int cmd_importance(const ImportanceOptions& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const auto data = load_experiment(o.data);
  const Model& m = ckpt.model;
  const auto groups = encode_groups(with_schema(data.eval, m.schema), m.schema, m.stats, m.mmoe.tasks);
  auto [cats, anchor] = default_categories(m.schema);
  if (!o.anchor.empty()) anchor = o.anchor;
  const auto rep = importance_report(m, groups, cats, anchor, o.repeats, o.seed);
  const std::string digest = config_digest(json{{"checkpoint", checkpoint_digest(ckpt)},
                                                {"eval", data.eval_digest},
                                                {"repeats", o.repeats},
                                                {"seed", o.seed},
                                                {"anchor", anchor}});
  {
    Output out(o.out);
    write_evaluation_report(out.os(), digest, rep);
    if (o.table_out.empty()) {
      out.os() << '\n';
      write_importance_csv(out.os(), rep.normalized);
    }
  }
  if (!o.table_out.empty()) {
    Output table(o.table_out);
    write_digest_header(table.os(), digest);
    write_importance_csv(table.os(), rep.normalized);
  }
  return 0;
}

struct GridOptions {
  std::string spec;
  DataOptions data;
  std::string out;
  bool timing = false;
  std::size_t jobs = 1;
};

int cmd_grid(const GridOptions& o) {
  GridSpec g = grid_spec_from_json(json::parse(read_file_bytes(o.spec)));
  const auto data = load_experiment(o.data, &g.base);
  const CellRunner runner = o.jobs > 1 ? precompute_cells_in_processes(g, data, o.jobs) : CellRunner{};
  const auto rep = run_grid(g, data, runner);
  Output out(o.out.empty() ? g.output : o.out);
  write_grid_csv(out.os(), rep, o.timing);
  return 0;
}

struct SweepOptions {
  std::string config;
  DataOptions data;
  std::vector<std::size_t> windows{2, 4, 8, 16};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out;
};

int cmd_data_sweep(const SweepOptions& o) {
  const RunConfig cfg = load_config_or_default(o.config);
  const auto data = load_experiment(o.data, &cfg);
  const auto rep = data_sweep(cfg, data, o.windows, o.seeds);
  json doc = experiment_doc(data);
  doc["base"] = to_json(cfg);
  doc["windows"] = o.windows;
  doc["seeds"] = o.seeds;
  Output out(o.out);
  write_data_sweep_csv(out.os(), config_digest(doc), rep);
  return 0;
}

struct AdditivityOptions {
  std::string config;
  DataOptions data;
  std::size_t base_window = 4;
  std::size_t scaled_window = 16;
  std::string backbone_factor = "cross_width";
  std::size_t scaled_backbone = 256;
  std::size_t scaled_embed_dim = 16;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out;
};

int cmd_additivity(const AdditivityOptions& o) {
  AdditivityPlan plan;
  plan.base = load_config_or_default(o.config);
  plan.base.window_days = o.base_window;
  plan.scaled_window = o.scaled_window;
  plan.backbone_factor = o.backbone_factor;
  plan.scaled_backbone = o.scaled_backbone;
  plan.scaled_embed_dim = o.scaled_embed_dim;
  plan.seeds = o.seeds;
  const auto data = load_experiment(o.data, &plan.base);
  const auto runs = run_additivity(plan, data);
  const auto rep = additivity_report(runs.base_digest, runs.base_map, runs.arms);
  json doc = experiment_doc(data);
  doc["base"] = to_json(plan.base);
  doc["scaled"] = {{"window", o.scaled_window}, {o.backbone_factor, o.scaled_backbone}, {"embed_dim", o.scaled_embed_dim}};
  doc["seeds"] = o.seeds;
  Output out(o.out);
  write_additivity_csv(out.os(), config_digest(doc), rep);
  return 0;
}

struct WarmstartOptions {
  std::string config;
  DataOptions data;
  std::string feature = "price";
  std::size_t warm_epochs = 2;
  std::size_t scratch_epochs = 5;
  double fine_tune_lr_peak = 1e-3;
  std::string out;
};

int cmd_warmstart_compare(const WarmstartOptions& o) {
  const RunConfig cfg = load_config_or_default(o.config);
  const auto data = load_experiment(o.data, &cfg);
  const auto c = warmstart_compare(cfg, data, o.feature, o.warm_epochs, o.scratch_epochs, o.fine_tune_lr_peak);
  json doc = experiment_doc(data);
  doc["base"] = to_json(cfg);
  doc["feature"] = o.feature;
  doc["warm_epochs"] = o.warm_epochs;
  doc["scratch_epochs"] = o.scratch_epochs;
  doc["fine_tune_lr_peak"] = o.fine_tune_lr_peak;
  Output out(o.out);
  write_warmstart_csv(out.os(), config_digest(doc), c);
  return 0;
}

// ---------------------------------------------------------------------------
// Serving

struct ServeOptions {
  std::string checkpoint;
  std::string schema;
  double batch_timeout_ms = 0.0;
  std::size_t max_batch_items = 1;
  std::size_t queue_capacity = 1024;
  std::string stage_a_cost;
  std::string stage_b_cost;
  std::uint16_t port = 7070;
  bool sim_clock = false;
  bool any_interface = false;
};

ServerConfig server_config(const ServeOptions& o) {
  ServerConfig sc;
  sc.batcher.batch_timeout_ms = o.batch_timeout_ms;
  sc.batcher.max_batch_items = o.max_batch_items;
  sc.batcher.queue_capacity = o.queue_capacity;
  sc.batcher.validate();
  sc.stage_a = stage_cost_option(o.stage_a_cost);
  sc.stage_b = stage_cost_option(o.stage_b_cost);
  sc.port = o.port;
  sc.sim_clock = o.sim_clock;
  sc.loopback_only = !o.any_interface;
  return sc;
}

int cmd_serve(const ServeOptions& o) {
  // Block the stop signals before any server thread exists so sigwait sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const FeatureSchema schema = o.schema.empty() ? ckpt.model.schema : load_schema(o.schema);
  Server server(std::move(ckpt.model), schema, server_config(o));
  server.start();
  std::cout << "listening on port " << server.port() << (o.sim_clock ? " (simulated clock)" : "") << std::endl;
  int sig = 0;
  sigwait(&stop_signals, &sig);
  server.stop();
  const auto st = server.stats();
  std::cout << "served " << st.requests << " requests, " << st.items << " items in " << st.batches << " batches; "
            << st.overloads << " overloads, " << st.errors << " errors" << std::endl;
  return 0;
}

struct LoadgenCliOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7070;
  std::string schema;
  std::string data;
  double qps = 100.0;
  double duration_s = 10.0;
  std::size_t items = 8;
  std::uint64_t seed = 0;
  double latency_bound_ms = 0.0;
  std::vector<double> timeout_sweep;
  // in-process servers for --timeout-sweep
  std::string checkpoint;
  std::size_t max_batch_items = 256;
  std::string stage_a_cost;
  std::string stage_b_cost;
  PeakSearchConfig search;
  std::string out;
};

// Items for load generation: the dataset's records, or a small synthetic day.
std::vector<FeatureRecord> record_pool(const std::string& dir, const FeatureSchema& schema, std::uint64_t seed) {
  Dataset d;
  if (dir.empty()) {
    SynthSpec s = canonical_spec(seed);
    s.n_days = 1;
    s.groups_per_day = 64;
    d = generate(s);
  } else {
    d = load_dataset(dir).data;
  }
  return all_records(with_schema(d, schema), schema);
}

json loadgen_doc(const LoadgenCliOptions& o) {
  return {{"qps", o.qps},
          {"duration_s", o.duration_s},
          {"items", o.items},
          {"seed", o.seed},
          {"latency_bound_ms", o.latency_bound_ms},
          {"timeout_sweep", o.timeout_sweep},
          {"max_batch_items", o.max_batch_items},
          {"stage_a_cost", o.stage_a_cost},
          {"stage_b_cost", o.stage_b_cost}};
}

void write_peak_csv(std::ostream& os, double bound, const PeakResult& p) {
  os << "latency_bound_ms,peak_qps,probes,flag\n";
  os << format_metric(bound) << ',' << format_metric(p.peak_qps) << ',' << p.probes << ','
     << (p.violated_at_min ? "bound_violated_at_min_qps" : p.capped ? "capped_at_max_qps" : "") << '\n';
}

// Timeout sweep against in-process servers started from one checkpoint.
std::vector<TimeoutRow> live_timeout_sweep(const LoadgenCliOptions& o, const std::vector<FeatureRecord>& pool) {
  if (o.checkpoint.empty()) throw ConfigError("--timeout-sweep against live servers needs --checkpoint");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  auto probe = [&](double timeout_ms, double qps) {
    ServeOptions so;
    so.batch_timeout_ms = timeout_ms;
    so.max_batch_items = timeout_ms > 0.0 ? o.max_batch_items : 1;
    so.stage_a_cost = o.stage_a_cost;
    so.stage_b_cost = o.stage_b_cost;
    so.port = 0;
    Server server(ckpt.model, ckpt.model.schema, server_config(so));
    server.start();
    LoadgenConfig lc{"127.0.0.1", server.port(), qps, o.search.duration_s, o.items, o.seed};
    auto rep = run_loadgen(lc, ckpt.model.schema, pool);
    server.stop();
    return rep;
  };
  return timeout_sweep(o.timeout_sweep, probe, o.latency_bound_ms, o.search);
}

int cmd_loadgen(const LoadgenCliOptions& o) {
  if (o.schema.empty() && o.checkpoint.empty()) throw ConfigError("loadgen needs --schema or --checkpoint");
  const FeatureSchema schema = o.schema.empty() ? load_checkpoint(o.checkpoint).model.schema : load_schema(o.schema);
  const auto pool = record_pool(o.data, schema, o.seed);
  Output out(o.out);
  write_digest_header(out.os(), config_digest(loadgen_doc(o)));
  if (!o.timeout_sweep.empty()) {
    if (!(o.latency_bound_ms > 0.0)) throw ConfigError("--timeout-sweep needs --latency-bound-ms");
    write_timeout_sweep_csv(out.os(), live_timeout_sweep(o, pool));
    return 0;
  }
  auto run = [&](double qps) {
    LoadgenConfig lc{o.host, o.port, qps, o.duration_s, o.items, o.seed};
    return run_loadgen(lc, schema, pool);
  };
  if (o.latency_bound_ms > 0.0) {
    PeakSearchConfig search = o.search;
    search.duration_s = o.duration_s;
    write_peak_csv(out.os(), o.latency_bound_ms, peak_qps_search(run, o.latency_bound_ms, search));
    return 0;
  }
  const auto rep = run(o.qps);
  write_latency_csv(out.os(), rep);
  return rep.valid ? 0 : 1;
}

struct QpsSweepOptions {
  LoadgenCliOptions lg;
  bool sim_clock = false;
};

int cmd_qps_sweep(QpsSweepOptions o) {
  auto& lg = o.lg;
  if (lg.timeout_sweep.empty()) lg.timeout_sweep = {0, 5, 10, 15, 20, 30};
  if (!(lg.latency_bound_ms > 0.0)) lg.latency_bound_ms = 50.0;
  if (lg.stage_b_cost.empty()) lg.stage_b_cost = "5,0.1";
  lg.search.duration_s = lg.duration_s;
  lg.search.seed = lg.seed;
  json doc = loadgen_doc(lg);
  doc["sim_clock"] = o.sim_clock;
  doc["search"] = {{"qps_lo", lg.search.qps_lo}, {"qps_hi", lg.search.qps_hi}, {"eps_qps", lg.search.eps_qps}};
  std::vector<TimeoutRow> rows;
  if (o.sim_clock) {
    SimServingConfig base;
    base.stage_a = stage_cost_option(lg.stage_a_cost);
    base.stage_b = stage_cost_option(lg.stage_b_cost);
    base.items_per_request = lg.items;
    auto probe = [&](double timeout_ms, double qps) {
      SimServingConfig c = base;
      c.batcher.batch_timeout_ms = timeout_ms;
      c.batcher.max_batch_items = timeout_ms > 0.0 ? lg.max_batch_items : 1;
      return simulate_serving(c, qps, lg.search.duration_s, lg.seed);
    };
    rows = timeout_sweep(lg.timeout_sweep, probe, lg.latency_bound_ms, lg.search);
  } else {
    rows = live_timeout_sweep(lg, record_pool(lg.data, load_checkpoint(lg.checkpoint).model.schema, lg.seed));
  }
  Output out(lg.out);
  write_digest_header(out.os(), config_digest(doc));
  write_timeout_sweep_csv(out.os(), rows);
  return 0;
}

void add_search_options(CLI::App* app, PeakSearchConfig& s) {
  app->add_option("--qps-lo", s.qps_lo, "Lowest probed QPS");
  app->add_option("--qps-hi", s.qps_hi, "Highest probed QPS");
  app->add_option("--eps-qps", s.eps_qps, "Bisection resolution in QPS");
}

void add_loadgen_options(CLI::App* app, LoadgenCliOptions& o) {
  app->add_option("--host", o.host, "Server host");
  app->add_option("--port", o.port, "Server port");
  app->add_option("--schema", o.schema, "Feature schema file");
  app->add_option("--data", o.data, "Dataset directory supplying request items");
  app->add_option("--qps", o.qps, "Offered requests per second");
  app->add_option("--duration-s", o.duration_s, "Seconds of offered load per run");
  app->add_option("--items", o.items, "Items per request");
  app->add_option("--seed", o.seed, "Arrival-process seed");
  app->add_option("--latency-bound-ms", o.latency_bound_ms, "Search for the peak QPS whose p99 stays within this bound");
  app->add_option("--timeout-sweep", o.timeout_sweep, "Batch timeouts (ms) to sweep")->delimiter(',');
  app->add_option("--checkpoint", o.checkpoint, "Checkpoint for in-process servers during a timeout sweep");
  app->add_option("--max-batch-items", o.max_batch_items, "Server batch cap during a timeout sweep");
  app->add_option("--stage-a-cost", o.stage_a_cost, "Stage A delay 'fixed,per_item' in ms");
  app->add_option("--stage-b-cost", o.stage_b_cost, "Stage B delay 'fixed,per_item' in ms");
  app->add_option("--out", o.out, "Output CSV (default stdout)");
  add_search_options(app, o.search);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cvrbench: CVR ranking workbench"};
  app.require_subcommand(1);

  SynthOptions synth_o;
  auto* synth = app.add_subcommand("synth", "Generate a planted synthetic dataset");
  synth->add_option("--out", synth_o.out, "Output directory")->required();
  synth->add_option("--seed", synth_o.seed, "Generator seed (canonical spec)");
  synth->add_option("--spec", synth_o.spec_path, "Generator spec JSON instead of the canonical one");
  synth->add_option("--days", synth_o.days, "Override the number of days");
  synth->add_option("--groups-per-day", synth_o.groups_per_day, "Override groups per day");

  TrainCliOptions train_o;
  auto* train_cmd = app.add_subcommand("train", "Train a model on the non-held-out days");
  train_cmd->add_option("--config", train_o.config, "Run config JSON");
  add_data_options(train_cmd, train_o.data);
  train_cmd->add_option("--checkpoint", train_o.checkpoint, "Checkpoint output path")->required();
  train_cmd->add_option("--metrics", train_o.metrics, "Metrics log CSV");

  EvalOptions eval_o;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out days");
  eval->add_option("--checkpoint", eval_o.checkpoint, "Checkpoint path")->required();
  add_data_options(eval, eval_o.data);
  eval->add_option("--out", eval_o.out, "Output CSV (default stdout)");

  ImportanceOptions imp_o;
  auto* imp = app.add_subcommand("importance", "Permutation importance report");
  imp->add_option("--checkpoint", imp_o.checkpoint, "Checkpoint path")->required();
  add_data_options(imp, imp_o.data);
  imp->add_option("--repeats", imp_o.repeats, "Permutations per feature set");
  imp->add_option("--seed", imp_o.seed, "Permutation seed");
  imp->add_option("--anchor", imp_o.anchor, "Category paired with every other in second-order drops");
  imp->add_option("--out", imp_o.out, "Evaluation report CSV (default stdout)");
  imp->add_option("--table-out", imp_o.table_out, "Separate category,percentage table");

  GridOptions grid_o;
  auto* grid = app.add_subcommand("grid", "Scaling-factor grid");
  grid->add_option("--spec", grid_o.spec, "Grid spec JSON")->required();
  add_data_options(grid, grid_o.data);
  grid->add_option("--out", grid_o.out, "Output CSV (default: the grid file's output, else stdout)");
  grid->add_flag("--timing", grid_o.timing, "Include training throughput columns");
  grid->add_option("--jobs", grid_o.jobs, "Run cells in up to this many child processes");

  SweepOptions sweep_o;
  auto* sweep = app.add_subcommand("data-sweep", "mAP against training-window length");
  sweep->add_option("--config", sweep_o.config, "Run config JSON");
  add_data_options(sweep, sweep_o.data);
  sweep->add_option("--windows", sweep_o.windows, "Window lengths in days")->delimiter(',');
  sweep->add_option("--seeds", sweep_o.seeds, "Replicate seeds")->delimiter(',');
  sweep->add_option("--out", sweep_o.out, "Output CSV (default stdout)");

  AdditivityOptions add_o;
  auto* add = app.add_subcommand("additivity", "Data, backbone and embedding scaling alone and combined");
  add->add_option("--config", add_o.config, "Base run config JSON");
  add_data_options(add, add_o.data);
  add->add_option("--base-window", add_o.base_window, "Base training window in days");
  add->add_option("--scaled-window", add_o.scaled_window, "Scaled training window in days");
  add->add_option("--backbone-factor", add_o.backbone_factor, "Backbone scaling factor");
  add->add_option("--scaled-backbone", add_o.scaled_backbone, "Scaled backbone factor value");
  add->add_option("--scaled-embed-dim", add_o.scaled_embed_dim, "Scaled embedding width");
  add->add_option("--seeds", add_o.seeds, "Replicate seeds")->delimiter(',');
  add->add_option("--out", add_o.out, "Output CSV (default stdout)");

  WarmstartOptions warm_o;
  auto* warm = app.add_subcommand("warmstart-compare", "Warmstarted fine-tune against training from scratch");
  warm->add_option("--config", warm_o.config, "Run config JSON");
  add_data_options(warm, warm_o.data);
  warm->add_option("--feature", warm_o.feature, "Feature absent from the prior model");
  warm->add_option("--warm-epochs", warm_o.warm_epochs, "Fine-tune epochs");
  warm->add_option("--scratch-epochs", warm_o.scratch_epochs, "From-scratch epochs");
  warm->add_option("--fine-tune-lr-peak", warm_o.fine_tune_lr_peak, "Peak learning rate of the warmstarted fine-tune");
  warm->add_option("--out", warm_o.out, "Output CSV (default stdout)");

  ServeOptions serve_o;
  auto* serve = app.add_subcommand("serve", "Scoring server (stops on SIGINT or SIGTERM)");
  serve->add_option("--checkpoint", serve_o.checkpoint, "Checkpoint path")->required();
  serve->add_option("--schema", serve_o.schema, "Serving schema; must match the checkpoint fingerprint");
  serve->add_option("--batch-timeout-ms", serve_o.batch_timeout_ms, "Dynamic batching window");
  serve->add_option("--max-batch-items", serve_o.max_batch_items, "Dispatch once this many items are queued");
  serve->add_option("--queue-capacity", serve_o.queue_capacity, "Queued requests before overload responses");
  serve->add_option("--stage-a-cost", serve_o.stage_a_cost, "Stage A delay 'fixed,per_item' in ms");
  serve->add_option("--stage-b-cost", serve_o.stage_b_cost, "Stage B delay 'fixed,per_item' in ms");
  serve->add_option("--port", serve_o.port, "TCP port (0 picks a free one)");
  serve->add_flag("--sim-clock", serve_o.sim_clock, "Account stage delays on a virtual timeline instead of sleeping");
  serve->add_flag("--any-interface", serve_o.any_interface, "Listen on all interfaces instead of loopback");

  LoadgenCliOptions lg_o;
  auto* lg = app.add_subcommand("loadgen", "Open-loop Poisson load against a server");
  add_loadgen_options(lg, lg_o);

  QpsSweepOptions qs_o;
  auto* qs = app.add_subcommand("qps-sweep", "Peak QPS per batch timeout");
  add_loadgen_options(qs, qs_o.lg);
  qs->add_flag("--sim-clock", qs_o.sim_clock, "Discrete-event simulation of the cost model instead of live servers");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(synth_o);
    if (*train_cmd) return cmd_train(train_o);
    if (*eval) return cmd_eval(eval_o);
    if (*imp) return cmd_importance(imp_o);
    if (*grid) return cmd_grid(grid_o);
    if (*sweep) return cmd_data_sweep(sweep_o);
    if (*add) return cmd_additivity(add_o);
    if (*warm) return cmd_warmstart_compare(warm_o);
    if (*serve) return cmd_serve(serve_o);
    if (*lg) return cmd_loadgen(lg_o);
    if (*qs) return cmd_qps_sweep(qs_o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
