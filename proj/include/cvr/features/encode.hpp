#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/features/record.hpp"
#include "cvr/features/schema.hpp"
#include "cvr/hash.hpp"
#include "cvr/numerics/graph.hpp"
#include "cvr/numerics/rng.hpp"
#include "cvr/numerics/tensor.hpp"

namespace cvr {

// Hashing trick: FNV-1a over the key's big-endian bytes, modulo vocab_size.
inline std::uint64_t hash_index(std::uint64_t key, std::uint64_t vocab_size) {
  if (vocab_size < 1) throw ContractError("hash_index: vocab_size must be >= 1");
  return fnv1a_u64(key) % vocab_size;
}

inline std::uint64_t hash_gram(std::string_view gram, std::uint64_t vocab_size) {
  if (vocab_size < 1) throw ContractError("hash_gram: vocab_size must be >= 1");
  return fnv1a(gram) % vocab_size;
}

// ---------------------------------------------------------------------------
// Numerical

struct Moments {
  double mean = 0.0;
  double std = 1.0;
  friend bool operator==(const Moments&, const Moments&) = default;
};

inline constexpr double kMinStd = 1e-8;

struct NormStats {
  std::map<std::string, Moments> features;

  const Moments& at(const std::string& name) const {
    auto it = features.find(name);
    if (it == features.end()) throw SchemaError("no normalization stats for feature '" + name + "'");
    return it->second;
  }
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

// Mean / population std of each numerical feature over non-MISSING values.
// A feature never observed gets (0, 1).
template <class RecordRange>
NormStats compute_norm_stats(const FeatureSchema& schema, const RecordRange& records) {
  NormStats stats;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].kind != FeatureKind::kNumerical) continue;
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const FeatureRecord& r : records) {
      if (const double* v = std::get_if<double>(&r.values[i])) {
        sum += *v;
        ++n;
      }
    }
    Moments m;
    if (n > 0) {
      m.mean = sum / static_cast<double>(n);
      for (const FeatureRecord& r : records)
        if (const double* v = std::get_if<double>(&r.values[i])) sq += (*v - m.mean) * (*v - m.mean);
      m.std = std::max(std::sqrt(sq / static_cast<double>(n)), kMinStd);
    }
    stats.features[schema[i].name] = m;
  }
  return stats;
}

// [(x - mean) / std, log1p(max(x, 0))]; MISSING -> [0, 0].
inline std::array<double, 2> encode_numerical(const FeatureValue& x, const Moments& m) {
  const double* v = std::get_if<double>(&x);
  if (v == nullptr) return {0.0, 0.0};
  return {(*v - m.mean) / std::max(m.std, kMinStd), std::log1p(std::max(*v, 0.0))};
}

inline std::array<double, 2> encode_numerical(double x, const Moments& m) {
  return encode_numerical(FeatureValue{x}, m);
}

// ---------------------------------------------------------------------------
// Embedded kinds: every value reduces to a bag of table rows.

// Overlapping character n-grams over UTF-8 code points. A non-empty string
// shorter than n yields itself as the single gram.
inline std::vector<std::string> char_ngrams(std::string_view s, std::size_t n) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < s.size(); ++i)
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) starts.push_back(i);
  std::vector<std::string> grams;
  if (starts.empty() || n == 0) return grams;
  if (starts.size() < n) {
    grams.emplace_back(s);
    return grams;
  }
  starts.push_back(s.size());
  for (std::size_t i = 0; i + n < starts.size(); ++i)
    grams.emplace_back(s.substr(starts[i], starts[i + n] - starts[i]));
  return grams;
}

using Bag = std::vector<std::uint32_t>;

inline Bag text_bag(std::string_view s, const FeatureSpec& spec) {
  Bag bag;
  for (const auto& g : char_ngrams(s, spec.ngram_n))
    bag.push_back(static_cast<std::uint32_t>(hash_gram(g, spec.vocab_size)));
  return bag;
}

// Keeps the most recent max_len keys (the tail of the list).
inline Bag sequence_bag(std::span<const std::uint64_t> keys, const FeatureSpec& spec) {
  const std::size_t keep = std::min(keys.size(), spec.max_len);
  Bag bag;
  bag.reserve(keep);
  for (std::size_t i = keys.size() - keep; i < keys.size(); ++i)
    bag.push_back(static_cast<std::uint32_t>(hash_index(keys[i], spec.vocab_size)));
  return bag;
}

inline Bag value_bag(const FeatureValue& v, const FeatureSpec& spec) {
  switch (spec.kind) {
    case FeatureKind::kCategorical:
      if (const auto* k = std::get_if<std::uint64_t>(&v))
        return {static_cast<std::uint32_t>(hash_index(*k, spec.vocab_size))};
      return {static_cast<std::uint32_t>(spec.vocab_size)};  // unseen row
    case FeatureKind::kText:
      if (const auto* s = std::get_if<std::string>(&v)) return text_bag(*s, spec);
      return {};
    case FeatureKind::kSequential:
      if (const auto* keys = std::get_if<std::vector<std::uint64_t>>(&v)) return sequence_bag(*keys, spec);
      return {};
    case FeatureKind::kNumerical: break;
  }
  throw ContractError("value_bag: numerical features are not embedded");
}

// Mean of the bag's rows (sum in bag order, then scale); empty -> zeros.
// embedding_bag() performs the identical arithmetic.
inline std::vector<double> pool_rows(const Tensor& table, const Bag& bag) {
  if (table.rank() != 2) throw DimensionError("embedding table must be a matrix, got " + shape_str(table.shape));
  const std::size_t d = table.shape[1];
  std::vector<double> out(d, 0.0);
  if (bag.empty()) return out;
  for (std::uint32_t idx : bag) {
    if (idx >= table.shape[0]) throw DimensionError("embedding row index out of range");
    for (std::size_t j = 0; j < d; ++j) out[j] += table.data[static_cast<std::size_t>(idx) * d + j];
  }
  const double inv = 1.0 / static_cast<double>(bag.size());
  for (double& x : out) x *= inv;
  return out;
}

inline std::vector<double> encode_text(std::string_view s, std::size_t ngram_n, const Tensor& table) {
  FeatureSpec spec;
  spec.kind = FeatureKind::kText;
  spec.ngram_n = ngram_n;
  spec.vocab_size = table.shape[0];
  return pool_rows(table, text_bag(s, spec));
}

inline std::vector<double> encode_sequential(std::span<const std::uint64_t> keys, const Tensor& table,
                                             std::size_t max_len) {
  FeatureSpec spec;
  spec.kind = FeatureKind::kSequential;
  spec.max_len = max_len;
  spec.vocab_size = table.shape[0];
  return pool_rows(table, sequence_bag(keys, spec));
}

// ---------------------------------------------------------------------------
// Tables and x0

using EmbeddingTables = std::map<std::string, Tensor>;

inline std::string table_param_name(const std::string& feature) { return "embed/" + feature + "/table"; }

// Uniform(-scale, scale) rows; each table draws from its own named substream.
inline Tensor init_table(const FeatureSpec& spec, std::uint64_t seed, double scale = 0.05) {
  SplitMix64 rng = SplitMix64(seed).derive(table_param_name(spec.name));
  Tensor t = Tensor::zeros({spec.table_rows(), spec.embed_dim});
  for (double& x : t.data) x = rng.uniform(-scale, scale);
  return t;
}

inline EmbeddingTables init_tables(const FeatureSchema& schema, std::uint64_t seed) {
  EmbeddingTables tables;
  for (const auto& s : schema.specs())
    if (s.embedded()) tables.emplace(s.name, init_table(s, seed));
  return tables;
}

inline void check_tables(const FeatureSchema& schema, const EmbeddingTables& tables) {
  for (const auto& s : schema.specs()) {
    if (!s.embedded()) continue;
    auto it = tables.find(s.name);
    if (it == tables.end()) throw SchemaError("no embedding table for feature '" + s.name + "'");
    const Shape want{s.table_rows(), s.embed_dim};
    if (it->second.shape != want)
      throw DimensionError("table for '" + s.name + "' has shape " + shape_str(it->second.shape) + ", expected " +
                           shape_str(want));
  }
}

// Concatenates every feature's encoding in schema order into a [1 x D] row.
inline Tensor assemble_x0(const FeatureRecord& record, const FeatureSchema& schema, const EmbeddingTables& tables,
                          const NormStats& stats) {
  validate_record(record, schema);
  check_tables(schema, tables);
  std::vector<double> x0;
  x0.reserve(schema.input_width());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const FeatureSpec& s = schema[i];
    if (s.kind == FeatureKind::kNumerical) {
      const auto enc = encode_numerical(record.values[i], stats.at(s.name));
      x0.insert(x0.end(), enc.begin(), enc.end());
    } else {
      const auto pooled = pool_rows(tables.at(s.name), value_bag(record.values[i], s));
      x0.insert(x0.end(), pooled.begin(), pooled.end());
    }
  }
  const std::size_t width = x0.size();
  return Tensor({1, width}, std::move(x0));
}

// Table-independent part of an item's encoding, computed once per dataset:
// normalized numericals plus the row bag of every embedded feature.
struct EncodedItem {
  std::vector<double> numeric;  // 2 per numerical feature, schema order
  std::vector<Bag> bags;        // one per embedded feature, schema order
};

inline EncodedItem encode_item(const FeatureRecord& record, const FeatureSchema& schema, const NormStats& stats) {
  validate_record(record, schema);
  EncodedItem e;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const FeatureSpec& s = schema[i];
    if (s.kind == FeatureKind::kNumerical) {
      const auto enc = encode_numerical(record.values[i], stats.at(s.name));
      e.numeric.push_back(enc[0]);
      e.numeric.push_back(enc[1]);
    } else {
      e.bags.push_back(value_bag(record.values[i], s));
    }
  }
  return e;
}

// Differentiable [B x D] x0 for a batch of encoded items. `tables` holds one
// graph node per embedded feature, in schema order.
inline Var assemble_batch(Graph& g, const FeatureSchema& schema, std::span<const Var> tables,
                          std::span<const EncodedItem* const> items) {
  if (items.empty()) throw ContractError("assemble_batch: empty batch");
  const std::size_t b = items.size();
  std::vector<Var> segments;
  std::size_t num_cursor = 0, bag_cursor = 0;
  std::size_t i = 0;
  while (i < schema.size()) {
    if (schema[i].kind == FeatureKind::kNumerical) {
      // Consecutive numerical features form one constant block.
      std::size_t j = i;
      while (j < schema.size() && schema[j].kind == FeatureKind::kNumerical) ++j;
      const std::size_t w = 2 * (j - i);
      std::vector<double> block(b * w);
      for (std::size_t r = 0; r < b; ++r)
        std::copy_n(items[r]->numeric.data() + num_cursor, w, block.data() + r * w);
      segments.push_back(g.constant({b, w}, std::move(block)));
      num_cursor += w;
      i = j;
    } else {
      if (bag_cursor >= tables.size()) throw SchemaError("assemble_batch: missing table for '" + schema[i].name + "'");
      std::vector<Bag> bags(b);
      for (std::size_t r = 0; r < b; ++r) bags[r] = items[r]->bags[bag_cursor];
      segments.push_back(embedding_bag(tables[bag_cursor], bags));
      ++bag_cursor;
      ++i;
    }
  }
  return segments.size() == 1 ? segments[0] : concat_cols(segments);
}

}  // namespace cvr
