#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/evaluation/metrics.hpp"
#include "cvr/serving/latency.hpp"
#include "cvr/serving/simulate.hpp"

namespace cvr {

struct PeakSearchConfig {
  double qps_lo = 10.0;
  double qps_hi = 20000.0;
  double eps_qps = 5.0;  // bisection stops once the bracket is this narrow
  double duration_s = 20.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(qps_lo > 0.0) || !(qps_hi > qps_lo)) throw ConfigError("peak search: need 0 < qps_lo < qps_hi");
    if (!(eps_qps > 0.0)) throw ConfigError("peak search: eps_qps must be > 0");
    if (!(duration_s > 0.0)) throw ConfigError("peak search: duration must be > 0");
  }
};

struct PeakResult {
  double peak_qps = 0.0;
  bool violated_at_min = false;  // even qps_lo breaks the bound; peak reported as 0
  bool capped = false;           // qps_hi still meets the bound
  std::size_t probes = 0;
};

using QpsProbe = std::function<LatencyReport(double qps)>;

inline bool meets_bound(const LatencyReport& r, double bound_ms) { return r.valid && r.p99 <= bound_ms; }

// Highest offered QPS whose measured p99 stays within the bound, by bisection.
inline PeakResult peak_qps_search(const QpsProbe& probe, double latency_bound_ms, const PeakSearchConfig& cfg) {
  cfg.validate();
  if (!(latency_bound_ms > 0.0)) throw ContractError("peak search: latency bound must be > 0");
  PeakResult res;
  auto ok = [&](double qps) {
    ++res.probes;
    return meets_bound(probe(qps), latency_bound_ms);
  };
  if (!ok(cfg.qps_lo)) {
    res.violated_at_min = true;
    return res;
  }
  if (ok(cfg.qps_hi)) {
    res.capped = true;
    res.peak_qps = cfg.qps_hi;
    return res;
  }
  double lo = cfg.qps_lo, hi = cfg.qps_hi;
  while (hi - lo > cfg.eps_qps) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  res.peak_qps = lo;
  return res;
}

struct TimeoutRow {
  double timeout_ms = 0.0;
  PeakResult peak;
  double ratio = 0.0;  // peak / no-batching peak; NaN when that baseline is 0
};

using TimeoutProbe = std::function<LatencyReport(double timeout_ms, double qps)>;

// One row per timeout; the first row is always the timeout-0 (no batching)
// baseline, prepended when absent.
inline std::vector<TimeoutRow> timeout_sweep(std::vector<double> timeouts_ms, const TimeoutProbe& probe,
                                             double latency_bound_ms, const PeakSearchConfig& cfg) {
  if (timeouts_ms.empty()) throw ContractError("timeout sweep: need at least one timeout");
  if (timeouts_ms.front() != 0.0) timeouts_ms.insert(timeouts_ms.begin(), 0.0);
  std::vector<TimeoutRow> rows;
  for (double t : timeouts_ms) {
    TimeoutRow row;
    row.timeout_ms = t;
    row.peak = peak_qps_search([&](double qps) { return probe(t, qps); }, latency_bound_ms, cfg);
    rows.push_back(row);
  }
  const double base = rows.front().peak.peak_qps;
  for (auto& r : rows) r.ratio = base > 0.0 ? r.peak.peak_qps / base : std::numeric_limits<double>::quiet_NaN();
  return rows;
}

inline void write_timeout_sweep_csv(std::ostream& os, const std::vector<TimeoutRow>& rows) {
  os << "batch_timeout_ms,peak_qps,ratio_vs_no_batching,flag\n";
  for (const auto& r : rows) {
    os << format_metric(r.timeout_ms) << ',' << format_metric(r.peak.peak_qps) << ',' << format_metric(r.ratio) << ','
       << (r.peak.violated_at_min ? "bound_violated_at_min_qps" : r.peak.capped ? "capped_at_max_qps" : "") << '\n';
  }
}

// Rises to a single maximum and then falls, ignoring steps smaller than `tol`.
inline bool unimodal_within(const std::vector<double>& v, double tol) {
  if (v.empty()) return true;
  const auto peak = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  for (std::size_t i = 0; i + 1 <= peak; ++i)
    if (v[i + 1] < v[i] - tol) return false;
  for (std::size_t i = peak; i + 1 < v.size(); ++i)
    if (v[i + 1] > v[i] + tol) return false;
  return true;
}

// Fluid approximation of the batching queue under delay(n) = F + c*n, every
// request carrying `items` items and only stage B costing time. With timeout
// T > 0 a batch holds the oldest request plus the lam*T arriving within its
// window, and a cycle lasts T + 1/lam. The peak is the largest rate that
// keeps the executor stable (service <= cycle) and the oldest request within
// the bound (T + service <= bound). T = 0 serves requests one at a time.
inline double analytic_peak_qps(const StageCost& cost, std::size_t items, double timeout_ms, double bound_ms) {
  const double n = static_cast<double>(items);
  const double f = cost.fixed_ms, c = cost.per_item_ms * n;
  if (timeout_ms <= 0.0) return f + c <= bound_ms ? 1000.0 / (f + c) : 0.0;
  const double t = timeout_ms;
  // Stability: c*t*lam^2 + (f + c - t)*lam - 1 <= 0.
  double stable;
  if (c == 0.0) {
    stable = f < t ? std::numeric_limits<double>::infinity() : 1.0 / (f - t);
  } else {
    const double qb = f + c - t;
    stable = (-qb + std::sqrt(qb * qb + 4.0 * c * t)) / (2.0 * c * t);
  }
  // Latency: t + f + c*(1 + lam*t) <= bound.
  const double slack = bound_ms - t - f - c;
  if (slack < 0.0) return 0.0;
  const double latency = c == 0.0 ? std::numeric_limits<double>::infinity() : slack / (c * t);
  return 1000.0 * std::min(stable, latency);
}

}  // namespace cvr
