#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/evaluation/metrics.hpp"
#include "cvr/numerics/rng.hpp"
#include "cvr/training/dataset.hpp"
#include "cvr/training/model.hpp"

namespace cvr {

// Primary-task scores and labels per group, ready for mAP.
inline std::vector<ScoredGroup> scored_groups(const Model& m, std::span<const EncodedGroup> groups) {
  const auto scores = score_groups(m, groups);
  const std::size_t task = m.mmoe.primary_index();
  std::vector<ScoredGroup> out(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    out[i].query_id = groups[i].query_id;
    out[i].scores = scores[i];
    for (double y : groups[i].labels[task]) out[i].purchased.push_back(y != 0.0 ? 1 : 0);
  }
  return out;
}

inline MapSummary evaluate_model(const Model& m, std::span<const EncodedGroup> groups) {
  const auto sg = scored_groups(m, groups);
  return summarize_map(sg);
}

// Permutation of n items for (feature, repeat).
using PermutationSource = std::function<std::vector<std::size_t>(const std::string&, std::size_t, std::size_t)>;

inline PermutationSource seeded_permutations(std::uint64_t seed) {
  return [seed](const std::string& feature, std::size_t repeat, std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    SplitMix64 rng = SplitMix64(seed).derive(feature).derive(repeat);
    rng.shuffle(p.begin(), p.end());
    return p;
  };
}

inline PermutationSource identity_permutations() {
  return [](const std::string&, std::size_t, std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    return p;
  };
}

struct ImportanceResult {
  std::vector<std::string> features;
  double baseline = 0.0;
  std::vector<double> drops;  // per repeat
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean drop
};

namespace detail {

// Where a feature's encoding lives inside an EncodedItem.
struct FeatureSlot {
  bool numeric = false;
  std::size_t index = 0;  // numeric pair start, or bag index
};

inline FeatureSlot feature_slot(const FeatureSchema& schema, const std::string& name) {
  const std::size_t at = schema.index_of(name);
  FeatureSlot s;
  s.numeric = schema[at].kind == FeatureKind::kNumerical;
  for (std::size_t i = 0; i < at; ++i)
    if ((schema[i].kind == FeatureKind::kNumerical) == s.numeric) s.index += s.numeric ? 2 : 1;
  return s;
}

}  // namespace detail

// Mean mAP drop after shuffling the raw values of `features` across every
// item of the evaluation set, each feature under its own permutation. The
// encoding is a per-item function of the raw value, so permuting encodings
// is the same as permuting raw values.
inline ImportanceResult perm_importance(const Model& m, std::span<const EncodedGroup> groups,
                                        const std::vector<std::string>& features, std::size_t n_repeats,
                                        const PermutationSource& perms) {
  if (n_repeats < 1) throw ContractError("perm_importance: n_repeats must be >= 1");
  if (features.empty()) throw ContractError("perm_importance: no features named");
  std::vector<detail::FeatureSlot> slots;
  for (const auto& f : features) slots.push_back(detail::feature_slot(m.schema, f));
  ImportanceResult r;
  r.features = features;
  r.baseline = evaluate_model(m, groups).map;
  std::vector<EncodedGroup> work(groups.begin(), groups.end());
  std::vector<const EncodedItem*> orig;
  std::vector<EncodedItem*> dest;
  for (const auto& g : groups)
    for (const auto& it : g.items) orig.push_back(&it);
  for (auto& g : work)
    for (auto& it : g.items) dest.push_back(&it);
  const std::size_t n = orig.size();
  for (std::size_t rep = 0; rep < n_repeats; ++rep) {
    for (std::size_t k = 0; k < features.size(); ++k) {
      const auto p = perms(features[k], rep, n);
      if (p.size() != n) throw ContractError("perm_importance: permutation has the wrong length");
      const auto& s = slots[k];
      for (std::size_t i = 0; i < n; ++i) {
        if (s.numeric) {
          dest[i]->numeric[s.index] = orig[p[i]]->numeric[s.index];
          dest[i]->numeric[s.index + 1] = orig[p[i]]->numeric[s.index + 1];
        } else {
          dest[i]->bags[s.index] = orig[p[i]]->bags[s.index];
        }
      }
    }
    r.drops.push_back(r.baseline - evaluate_model(m, work).map);
  }
  const double cnt = static_cast<double>(n_repeats);
  r.mean = std::accumulate(r.drops.begin(), r.drops.end(), 0.0) / cnt;
  if (n_repeats > 1) {
    double ss = 0.0;
    for (double d : r.drops) ss += (d - r.mean) * (d - r.mean);
    r.se = std::sqrt(ss / (cnt - 1.0)) / std::sqrt(cnt);
  }
  return r;
}

inline ImportanceResult perm_importance(const Model& m, std::span<const EncodedGroup> groups,
                                        const std::vector<std::string>& features, std::size_t n_repeats,
                                        std::uint64_t seed) {
  return perm_importance(m, groups, features, n_repeats, seeded_permutations(seed));
}

struct NormalizedImportance {
  std::vector<std::pair<std::string, double>> percent;  // input order
  bool degenerate = false;                              // all drops were zero; shares are uniform
};

// Each category's share of the total (negative drops clamped to 0), in percent.
inline NormalizedImportance normalize_importance(const std::vector<std::pair<std::string, double>>& drops) {
  if (drops.empty()) throw ContractError("normalize_importance: no categories");
  double total = 0.0;
  for (const auto& [_, d] : drops) total += std::max(d, 0.0);
  NormalizedImportance out;
  out.degenerate = total == 0.0;
  for (const auto& [name, d] : drops)
    out.percent.emplace_back(name, out.degenerate ? 100.0 / static_cast<double>(drops.size())
                                                  : 100.0 * std::max(d, 0.0) / total);
  return out;
}

inline void write_importance_csv(std::ostream& os, const NormalizedImportance& n) {
  os << "category,percentage\n";
  for (const auto& [name, p] : n.percent) os << name << ',' << format_metric(p) << '\n';
}

// Skips `#` comment lines; expects the `category,percentage` header.
inline std::vector<std::pair<std::string, double>> read_importance_csv(std::istream& is) {
  std::string line;
  std::vector<std::pair<std::string, double>> out;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "category,percentage") throw FormatError("importance csv: bad header '" + line + "'");
      header = true;
      continue;
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw FormatError("importance csv: bad row '" + line + "'");
    try {
      out.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw FormatError("importance csv: bad value in '" + line + "'");
    }
  }
  if (!header) throw FormatError("importance csv: missing header");
  return out;
}

}  // namespace cvr
