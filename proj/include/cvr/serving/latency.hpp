#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/evaluation/metrics.hpp"

namespace cvr {

// The ceil(q*N)-th smallest sample (1-based), q in (0, 1].
inline double nearest_rank(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw UndefinedMetricError("nearest_rank: no samples");
  if (!(q > 0.0 && q <= 1.0)) throw ContractError("nearest_rank: quantile must be in (0, 1]");
  // The epsilon keeps q*N that are integers in exact arithmetic (0.99 * 100) from rounding up.
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

// Latencies are per offered request; a rejected or unanswered request counts
// as +infinity, so overload can only push percentiles up.
struct LatencyReport {
  std::vector<double> latencies_ms;  // offered order
  std::size_t offered = 0;
  std::size_t completed = 0;
  std::size_t rejected = 0;
  double offered_qps = 0.0;
  double achieved_qps = 0.0;
  double duration_s = 0.0;
  double p50 = 0.0, p90 = 0.0, p99 = 0.0;
  bool valid = false;
  std::string note;
};

inline LatencyReport make_latency_report(std::vector<double> latencies_ms, std::size_t rejected, double offered_qps,
                                         double duration_s, std::string note = {}) {
  LatencyReport r;
  r.offered = latencies_ms.size();
  r.rejected = rejected;
  r.completed = static_cast<std::size_t>(
      std::count_if(latencies_ms.begin(), latencies_ms.end(), [](double v) { return std::isfinite(v); }));
  r.offered_qps = offered_qps;
  r.duration_s = duration_s;
  r.achieved_qps = duration_s > 0.0 ? static_cast<double>(r.completed) / duration_s : 0.0;
  r.latencies_ms = std::move(latencies_ms);
  r.note = std::move(note);
  r.valid = r.offered > 0 && r.note.empty();
  if (r.offered == 0) {
    if (r.note.empty()) r.note = "no traffic";
    return r;
  }
  std::vector<double> sorted = r.latencies_ms;
  std::sort(sorted.begin(), sorted.end());
  r.p50 = nearest_rank(sorted, 0.50);
  r.p90 = nearest_rank(sorted, 0.90);
  r.p99 = nearest_rank(sorted, 0.99);
  return r;
}

inline void write_latency_csv(std::ostream& os, const LatencyReport& r) {
  os << "metric,value\n";
  os << "offered," << r.offered << '\n';
  os << "completed," << r.completed << '\n';
  os << "rejected," << r.rejected << '\n';
  os << "offered_qps," << format_metric(r.offered_qps) << '\n';
  os << "achieved_qps," << format_metric(r.achieved_qps) << '\n';
  os << "p50_ms," << format_metric(r.p50) << '\n';
  os << "p90_ms," << format_metric(r.p90) << '\n';
  os << "p99_ms," << format_metric(r.p99) << '\n';
  os << "valid," << (r.valid ? 1 : 0) << '\n';
  if (!r.note.empty()) os << "note," << r.note << '\n';
}

}  // namespace cvr
