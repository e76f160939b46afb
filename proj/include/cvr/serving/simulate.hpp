#pragma once

#include <algorithm>
#include <limits>
#include <span>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/numerics/rng.hpp"
#include "cvr/serving/batcher.hpp"
#include "cvr/serving/latency.hpp"

namespace cvr {

struct StageTiming {
  double a_start = 0.0, a_end = 0.0;
  double b_start = 0.0, b_end = 0.0;
};

// Schedules batches, in order, through stage A then stage B. Pipelined: each
// stage has its own executor, so batch k+1 may occupy A while batch k is in B.
// Sequential: one executor runs both stages of a batch before the next starts.
inline std::vector<StageTiming> schedule_stages(std::span<const double> ready_ms, std::span<const std::size_t> sizes,
                                                const StageCost& a, const StageCost& b, bool pipelined) {
  if (ready_ms.size() != sizes.size()) throw DimensionError("schedule_stages: ready times and sizes differ in length");
  std::vector<StageTiming> out(sizes.size());
  double a_free = -std::numeric_limits<double>::infinity();
  double b_free = a_free;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    auto& t = out[k];
    t.a_start = std::max(ready_ms[k], pipelined ? a_free : b_free);
    t.a_end = t.a_start + a.delay_ms(sizes[k]);
    t.b_start = std::max(t.a_end, b_free);
    t.b_end = t.b_start + b.delay_ms(sizes[k]);
    a_free = t.a_end;
    b_free = t.b_end;
  }
  return out;
}

// Open-loop Poisson arrival times in [0, duration) milliseconds.
inline std::vector<double> poisson_arrivals(double qps, double duration_s, std::uint64_t seed) {
  if (!(qps > 0.0)) throw ContractError("poisson_arrivals: qps must be > 0");
  SplitMix64 rng = SplitMix64(seed).derive("arrivals");
  const double rate_per_ms = qps / 1000.0;
  const double end = duration_s * 1000.0;
  std::vector<double> t;
  for (double now = rng.exponential(rate_per_ms); now < end; now += rng.exponential(rate_per_ms)) t.push_back(now);
  return t;
}

struct SimServingConfig {
  BatcherConfig batcher;
  StageCost stage_a;
  StageCost stage_b;
  std::size_t items_per_request = 1;
  bool pipelined = true;
};

struct DispatchedBatch {
  double dispatch_ms = 0.0;
  std::vector<std::size_t> requests;  // indices into the arrival list
  std::size_t items = 0;
};

// Replays arrivals through the batcher on a simulated clock. Returns the
// batches in dispatch order and flags rejected requests.
inline std::vector<DispatchedBatch> simulate_batching(std::span<const double> arrivals_ms,
                                                      std::span<const std::size_t> items, const BatcherConfig& cfg,
                                                      std::vector<bool>* rejected = nullptr) {
  if (arrivals_ms.size() != items.size()) throw DimensionError("simulate_batching: arrivals and sizes differ in length");
  DynamicBatcher<std::size_t> batcher(cfg);
  std::vector<DispatchedBatch> out;
  if (rejected) rejected->assign(arrivals_ms.size(), false);
  auto drain = [&](double now) {
    while (auto b = batcher.poll(now)) {
      DispatchedBatch d{now, {}, 0};
      for (const auto& e : *b) {
        d.requests.push_back(e.payload);
        d.items += e.items;
      }
      out.push_back(std::move(d));
    }
  };
  for (std::size_t i = 0; i < arrivals_ms.size(); ++i) {
    // Timeouts that expire before this arrival fire at their own deadline.
    while (auto dl = batcher.next_deadline()) {
      if (*dl > arrivals_ms[i]) break;
      drain(*dl);
    }
    if (!batcher.offer(i, items[i], arrivals_ms[i]) && rejected) (*rejected)[i] = true;
    drain(arrivals_ms[i]);
  }
  while (auto dl = batcher.next_deadline()) drain(*dl);
  return out;
}

// Discrete-event model of the server: batcher, then the two-stage pipeline
// under the synthetic cost model. Deterministic in (config, qps, duration, seed).
inline LatencyReport simulate_serving(const SimServingConfig& cfg, double qps, double duration_s, std::uint64_t seed) {
  const auto arrivals = poisson_arrivals(qps, duration_s, seed);
  const std::vector<std::size_t> items(arrivals.size(), cfg.items_per_request);
  std::vector<bool> rejected;
  const auto batches = simulate_batching(arrivals, items, cfg.batcher, &rejected);
  std::vector<double> ready;
  std::vector<std::size_t> sizes;
  for (const auto& b : batches) {
    ready.push_back(b.dispatch_ms);
    sizes.push_back(b.items);
  }
  const auto timing = schedule_stages(ready, sizes, cfg.stage_a, cfg.stage_b, cfg.pipelined);
  std::vector<double> lat(arrivals.size(), std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < batches.size(); ++k)
    for (auto r : batches[k].requests) lat[r] = timing[k].b_end - arrivals[r];
  const auto n_rejected = static_cast<std::size_t>(std::count(rejected.begin(), rejected.end(), true));
  return make_latency_report(std::move(lat), n_rejected, qps, duration_s);
}

}  // namespace cvr
