#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cvr/errors.hpp"

namespace cvr {

struct ScoredGroup {
  std::uint64_t query_id = 0;
  std::vector<double> scores;
  std::vector<std::uint8_t> purchased;

  std::size_t positives() const {
    return static_cast<std::size_t>(std::count_if(purchased.begin(), purchased.end(), [](auto y) { return y != 0; }));
  }
};

// Item indices by descending score; ties keep ascending original index.
inline std::vector<std::size_t> ranking(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

inline void check_group(const ScoredGroup& g) {
  if (g.scores.size() != g.purchased.size())
    throw DimensionError("group " + std::to_string(g.query_id) + ": scores and labels differ in length");
}

// sum_k precision@k * purchased@k / #purchased over the ranked list.
inline double average_precision(const ScoredGroup& g) {
  check_group(g);
  const std::size_t pos = g.positives();
  if (pos == 0) throw ContractError("average_precision: group " + std::to_string(g.query_id) + " has no purchase");
  const auto order = ranking(g.scores);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (g.purchased[order[k]] == 0) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(pos);
}

// 1 / rank of the first purchased item.
inline double reciprocal_rank(const ScoredGroup& g) {
  check_group(g);
  const auto order = ranking(g.scores);
  for (std::size_t k = 0; k < order.size(); ++k)
    if (g.purchased[order[k]] != 0) return 1.0 / static_cast<double>(k + 1);
  throw ContractError("reciprocal_rank: group " + std::to_string(g.query_id) + " has no purchase");
}

struct MapSummary {
  double map = 0.0;
  double mrr = 0.0;               // over single-purchase groups; 0 when there are none
  std::size_t groups = 0;         // eligible groups
  std::size_t excluded = 0;       // groups without a purchase
  std::size_t single_purchase = 0;
};

// Sums in input order so the result is independent of how groups were scored.
inline MapSummary summarize_map(std::span<const ScoredGroup> groups) {
  MapSummary s;
  double ap = 0.0, rr = 0.0;
  for (const auto& g : groups) {
    const std::size_t pos = g.positives();
    if (pos == 0) {
      ++s.excluded;
      continue;
    }
    ++s.groups;
    ap += average_precision(g);
    if (pos == 1) {
      ++s.single_purchase;
      rr += reciprocal_rank(g);
    }
  }
  if (s.groups == 0) throw UndefinedMetricError("mAP over zero eligible groups");
  s.map = ap / static_cast<double>(s.groups);
  s.mrr = s.single_purchase ? rr / static_cast<double>(s.single_purchase) : 0.0;
  return s;
}

inline double mean_ap(std::span<const ScoredGroup> groups) { return summarize_map(groups).map; }

// H(n) / n: expected AP of one purchase among n items under random scores.
inline double random_expected_ap(std::size_t n) {
  double h = 0.0;
  for (std::size_t k = 1; k <= n; ++k) h += 1.0 / static_cast<double>(k);
  return h / static_cast<double>(n);
}

inline std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_metric_rows(std::ostream& os, const MapSummary& s) {
  os << "metric,value\n";
  os << "map," << format_metric(s.map) << '\n';
  os << "mrr," << format_metric(s.mrr) << '\n';
  os << "groups," << s.groups << '\n';
  os << "excluded_groups," << s.excluded << '\n';
}

}  // namespace cvr
