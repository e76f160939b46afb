#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cvr/errors.hpp"
#include "cvr/evaluation/metrics.hpp"
#include "cvr/features/record.hpp"
#include "cvr/features/schema.hpp"
#include "cvr/numerics/rng.hpp"
#include "cvr/training/dataset.hpp"

// Planted-utility ranking data. Every draw comes from a substream named by
// (day, group, item, role), so a group's content never depends on how many
// groups precede it.
namespace cvr {

struct PlantedWeights {
  std::map<std::string, double> linear;  // numerical feature -> weight on its raw value
  std::string cross_a, cross_b;          // pairwise term w_cross * a * b; empty disables
  double w_cross = 0.0;
  std::string affinity_feature;          // categorical feature with a per-key utility offset
  double affinity_scale = 0.0;

  friend bool operator==(const PlantedWeights&, const PlantedWeights&) = default;
};

struct SynthSpec {
  std::uint64_t seed = 7;
  std::size_t n_days = 24;
  std::size_t groups_per_day = 200;
  std::size_t min_items = 8;
  std::size_t max_items = 8;
  FeatureSchema schema;
  PlantedWeights weights;
  double tau = 1.0;  // 0 -> purchase is the utility argmax
  double click_offset = -1.0;
  bool multi_purchase = false;
  std::map<std::string, std::uint32_t> available_from;  // feature -> first day with values
  std::map<std::string, std::pair<double, double>> uniform_range;  // numerical -> U(lo, hi); default N(0, 1)
  std::uint64_t category_keys = 200;  // categorical keys drawn from 1..category_keys
  std::uint64_t sequence_keys = 1000;

  void validate() const {
    if (n_days < 1 || groups_per_day < 1) throw ContractError("synth: n_days and groups_per_day must be >= 1");
    if (min_items < 1 || min_items > max_items) throw ContractError("synth: need 1 <= min_items <= max_items");
    if (tau < 0.0) throw ContractError("synth: tau must be >= 0");
    if (category_keys < 1 || sequence_keys < 1) throw ContractError("synth: key ranges must be non-empty");
    for (const auto& [name, _] : weights.linear)
      if (schema.spec(name).kind != FeatureKind::kNumerical) throw SchemaError("synth: '" + name + "' is not numerical");
    for (const auto* f : {&weights.cross_a, &weights.cross_b})
      if (!f->empty() && schema.spec(*f).kind != FeatureKind::kNumerical)
        throw SchemaError("synth: cross feature '" + *f + "' is not numerical");
    if (!weights.affinity_feature.empty() && schema.spec(weights.affinity_feature).kind != FeatureKind::kCategorical)
      throw SchemaError("synth: affinity feature must be categorical");
    for (const auto& [name, _] : available_from) schema.index_of(name);
  }
};

inline constexpr double kSynthQuantum = 0x1.0p-16;

// Round half to even onto the 2^-16 grid, so printed values are short and exact.
inline double quantize(double x) { return std::nearbyint(x / kSynthQuantum) * kSynthQuantum; }

inline constexpr std::size_t kCanonicalHoldoutDays = 8;

inline FeatureSchema canonical_schema() {
  return FeatureSchema::parse(
      "qi_ctr numerical\n"
      "price numerical\n"
      "rel_a numerical\n"
      "rel_b numerical\n"
      "noise numerical\n"
      "brand categorical vocab_size=509 embed_dim=8\n"
      "title text ngram_n=3 vocab_size=2048 embed_dim=8\n"
      "history sequential max_len=16 vocab_size=1021 embed_dim=8\n");
}

// The reference planted problem: a strong linear signal (qi_ctr), a weaker
// one (price), a pairwise product (rel_a * rel_b), per-brand affinity, and a
// zero-weight noise feature. User history only exists from day 4 on. The
// last kCanonicalHoldoutDays days are reserved for evaluation.
inline SynthSpec canonical_spec(std::uint64_t seed = 7) {
  SynthSpec s;
  s.seed = seed;
  s.schema = canonical_schema();
  s.weights.linear = {{"qi_ctr", 3.0}, {"price", -0.04}, {"noise", 0.0}};
  s.weights.cross_a = "rel_a";
  s.weights.cross_b = "rel_b";
  s.weights.w_cross = 3.0;
  s.weights.affinity_feature = "brand";
  s.weights.affinity_scale = 0.8;
  s.tau = 0.5;
  s.available_from = {{"history", 4}};
  s.uniform_range = {{"qi_ctr", {0.0, 1.0}}, {"price", {10.0, 50.0}}};
  return s;
}

inline nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json ranges = nlohmann::json::object();
  for (const auto& [k, v] : s.uniform_range) ranges[k] = {v.first, v.second};
  return {{"seed", s.seed},
          {"n_days", s.n_days},
          {"groups_per_day", s.groups_per_day},
          {"min_items", s.min_items},
          {"max_items", s.max_items},
          {"schema", s.schema.serialize()},
          {"weights",
           {{"linear", s.weights.linear},
            {"cross_a", s.weights.cross_a},
            {"cross_b", s.weights.cross_b},
            {"w_cross", s.weights.w_cross},
            {"affinity_feature", s.weights.affinity_feature},
            {"affinity_scale", s.weights.affinity_scale}}},
          {"tau", s.tau},
          {"click_offset", s.click_offset},
          {"multi_purchase", s.multi_purchase},
          {"available_from", s.available_from},
          {"uniform_range", ranges},
          {"category_keys", s.category_keys},
          {"sequence_keys", s.sequence_keys}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  try {
    SynthSpec s = canonical_spec(j.value("seed", std::uint64_t{7}));
    s.n_days = j.value("n_days", s.n_days);
    s.groups_per_day = j.value("groups_per_day", s.groups_per_day);
    s.min_items = j.value("min_items", s.min_items);
    s.max_items = j.value("max_items", s.max_items);
    if (j.contains("schema")) s.schema = FeatureSchema::parse(j.at("schema").get<std::string>());
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      s.weights.linear = w.value("linear", s.weights.linear);
      s.weights.cross_a = w.value("cross_a", s.weights.cross_a);
      s.weights.cross_b = w.value("cross_b", s.weights.cross_b);
      s.weights.w_cross = w.value("w_cross", s.weights.w_cross);
      s.weights.affinity_feature = w.value("affinity_feature", s.weights.affinity_feature);
      s.weights.affinity_scale = w.value("affinity_scale", s.weights.affinity_scale);
    }
    s.tau = j.value("tau", s.tau);
    s.click_offset = j.value("click_offset", s.click_offset);
    s.multi_purchase = j.value("multi_purchase", s.multi_purchase);
    s.available_from = j.value("available_from", s.available_from);
    if (j.contains("uniform_range")) {
      s.uniform_range.clear();
      for (const auto& [k, v] : j.at("uniform_range").items()) s.uniform_range[k] = {v.at(0), v.at(1)};
    }
    s.category_keys = j.value("category_keys", s.category_keys);
    s.sequence_keys = j.value("sequence_keys", s.sequence_keys);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
}

// Utility offset of one categorical key, a pure function of (seed, key).
inline double affinity(const SynthSpec& s, std::uint64_t key) {
  SplitMix64 rng = SplitMix64(s.seed).derive("affinity").derive(key);
  return quantize(s.weights.affinity_scale * rng.normal());
}

// Planted utility of one record; MISSING values contribute 0.
inline double planted_utility(const SynthSpec& s, const FeatureRecord& r) {
  auto num = [&](const std::string& name) {
    const auto* v = std::get_if<double>(&r.values[s.schema.index_of(name)]);
    return v ? *v : 0.0;
  };
  double u = 0.0;
  for (const auto& [name, w] : s.weights.linear) u += w * num(name);
  if (!s.weights.cross_a.empty() && !s.weights.cross_b.empty())
    u += s.weights.w_cross * num(s.weights.cross_a) * num(s.weights.cross_b);
  if (!s.weights.affinity_feature.empty())
    if (const auto* k = std::get_if<std::uint64_t>(&r.values[s.schema.index_of(s.weights.affinity_feature)]))
      u += affinity(s, *k);
  return u;
}

namespace detail {

inline constexpr const char* kWords[] = {"red",   "blue",  "shoe",  "lamp", "mug",    "desk",  "pro",  "mini",
                                         "eco",   "smart", "chair", "bag",  "phone",  "cable", "case", "glass"};

inline bool available(const SynthSpec& s, const std::string& feature, std::uint32_t day) {
  auto it = s.available_from.find(feature);
  return it == s.available_from.end() || day >= it->second;
}

inline FeatureRecord draw_item(const SynthSpec& s, std::uint32_t day, SplitMix64 rng,
                               const std::map<std::string, FeatureValue>& context) {
  FeatureRecord r;
  r.values.assign(s.schema.size(), Missing{});
  std::uint64_t affinity_key = 0;
  for (std::size_t i = 0; i < s.schema.size(); ++i) {
    const FeatureSpec& f = s.schema[i];
    SplitMix64 fr = rng.derive(f.name);
    switch (f.kind) {
      case FeatureKind::kNumerical: {
        auto it = s.uniform_range.find(f.name);
        const double x = it == s.uniform_range.end() ? fr.normal() : fr.uniform(it->second.first, it->second.second);
        r.values[i] = quantize(x);
        break;
      }
      case FeatureKind::kCategorical: {
        const std::uint64_t key = 1 + fr.below(s.category_keys);
        if (f.name == s.weights.affinity_feature) affinity_key = key;
        r.values[i] = key;
        break;
      }
      case FeatureKind::kText: break;  // filled below, may mention the affinity key
      case FeatureKind::kSequential: r.values[i] = context.at(f.name); break;
    }
  }
  for (std::size_t i = 0; i < s.schema.size(); ++i) {
    const FeatureSpec& f = s.schema[i];
    if (f.kind != FeatureKind::kText) continue;
    SplitMix64 fr = rng.derive(f.name);
    std::string text = affinity_key ? "b" + std::to_string(affinity_key) : std::string(detail::kWords[fr.below(16)]);
    for (int w = 0; w < 2; ++w) text += std::string(" ") + detail::kWords[fr.below(16)];
    r.values[i] = std::move(text);
  }
  for (std::size_t i = 0; i < s.schema.size(); ++i)
    if (!available(s, s.schema[i].name, day)) r.values[i] = Missing{};
  return r;
}

}  // namespace detail

inline RankingGroup generate_group(const SynthSpec& s, std::uint32_t day, std::size_t index) {
  RankingGroup g;
  g.day = day;
  g.query_id = static_cast<std::uint64_t>(day) * 1'000'000 + index;
  SplitMix64 rng = SplitMix64(s.seed).derive("day").derive(day).derive(index);
  SplitMix64 meta = rng.derive("group");
  const std::size_t n = s.min_items + meta.below(s.max_items - s.min_items + 1);

  // Query-level sequential context, shared by every item of the group.
  std::map<std::string, FeatureValue> context;
  for (const auto& f : s.schema.specs()) {
    if (f.kind != FeatureKind::kSequential) continue;
    SplitMix64 hr = rng.derive("context").derive(f.name);
    std::vector<std::uint64_t> keys(hr.below(f.max_len + 1));
    for (auto& k : keys) k = 1 + hr.below(s.sequence_keys);
    context[f.name] = std::move(keys);
  }
  for (std::size_t i = 0; i < n; ++i) g.items.push_back(detail::draw_item(s, day, rng.derive("item").derive(i), context));
  for (const auto& r : g.items) g.utility.push_back(planted_utility(s, r));

  // Purchase: argmax of u / tau + Gumbel, i.e. a draw from softmax(u / tau).
  SplitMix64 noise = rng.derive("purchase");
  std::vector<double> perturbed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gumbel = noise.gumbel();
    perturbed[i] = s.tau == 0.0 ? g.utility[i] : g.utility[i] / s.tau + gumbel;
  }
  const auto order = ranking(perturbed);
  std::vector<std::uint8_t> purchase(n, 0), click(n, 0);
  std::size_t bought = 1;
  if (s.multi_purchase) bought = std::min<std::size_t>(n, 1 + meta.below(2));
  for (std::size_t k = 0; k < bought; ++k) purchase[order[k]] = 1;
  SplitMix64 clicks = rng.derive("click");
  for (std::size_t i = 0; i < n; ++i)
    click[i] = clicks.bernoulli(1.0 / (1.0 + std::exp(-(g.utility[i] + s.click_offset)))) ? 1 : 0;
  g.labels = {std::move(click), std::move(purchase)};  // dataset task order: click, purchase
  return g;
}

inline Dataset generate(const SynthSpec& s) {
  s.validate();
  Dataset d;
  d.schema = s.schema;
  d.tasks = {"click", "purchase"};
  for (std::uint32_t day = 0; day < s.n_days; ++day)
    for (std::size_t i = 0; i < s.groups_per_day; ++i) d.groups.push_back(generate_group(s, day, i));
  return d;
}

inline std::vector<std::uint32_t> days_of(const Dataset& d) {
  std::vector<std::uint32_t> days;
  for (const auto& g : d.groups)
    if (days.empty() || days.back() != g.day) days.push_back(g.day);
  std::sort(days.begin(), days.end());
  days.erase(std::unique(days.begin(), days.end()), days.end());
  return days;
}

inline Dataset filter_days(const Dataset& d, std::uint32_t first, std::uint32_t last_exclusive) {
  Dataset out{d.schema, d.tasks, {}};
  for (const auto& g : d.groups)
    if (g.day >= first && g.day < last_exclusive) out.groups.push_back(g);
  return out;
}

// The most recent n days present in `d`, in original order.
inline Dataset window(const Dataset& d, std::size_t last_n_days) {
  const auto days = days_of(d);
  if (last_n_days < 1 || last_n_days > days.size())
    throw ContractError("window: " + std::to_string(last_n_days) + " days requested, dataset has " +
                        std::to_string(days.size()));
  const std::uint32_t first = days[days.size() - last_n_days];
  return filter_days(d, first, std::numeric_limits<std::uint32_t>::max());
}

// Training days and the trailing `holdout_days` evaluation days.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& d, std::size_t holdout_days) {
  const auto days = days_of(d);
  if (holdout_days < 1 || holdout_days >= days.size())
    throw ContractError("split_holdout: need 1 <= holdout_days < " + std::to_string(days.size()));
  const std::uint32_t cut = days[days.size() - holdout_days];
  return {filter_days(d, 0, cut), filter_days(d, cut, std::numeric_limits<std::uint32_t>::max())};
}

// Rewrites every record into another schema by feature name.
inline Dataset project_dataset(const Dataset& d, const FeatureSchema& schema) {
  Dataset out{schema, d.tasks, d.groups};
  for (auto& g : out.groups)
    for (auto& r : g.items) r = project_record(r, d.schema, schema);
  return out;
}

// mAP of the planted utility as scorer: the ceiling for any model.
inline double oracle_map(const Dataset& d) {
  const std::size_t task = d.task_index("purchase");
  std::vector<ScoredGroup> sg;
  sg.reserve(d.groups.size());
  for (const auto& g : d.groups) {
    if (g.utility.size() != g.items.size()) throw ContractError("oracle_map: group without planted utility");
    sg.push_back({g.query_id, g.utility, g.labels[task]});
  }
  return mean_ap(sg);
}

}  // namespace cvr
