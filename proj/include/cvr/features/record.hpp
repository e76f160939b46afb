#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/features/schema.hpp"

namespace cvr {

struct Missing {
  friend bool operator==(Missing, Missing) { return true; }
};

// numerical = double, categorical = 64-bit key, text = string,
// sequential = item keys oldest first.
using FeatureValue = std::variant<Missing, double, std::uint64_t, std::string, std::vector<std::uint64_t>>;

inline bool is_missing(const FeatureValue& v) { return std::holds_alternative<Missing>(v); }

inline bool value_matches(FeatureKind kind, const FeatureValue& v) {
  if (is_missing(v)) return true;
  switch (kind) {
    case FeatureKind::kNumerical: return std::holds_alternative<double>(v);
    case FeatureKind::kCategorical: return std::holds_alternative<std::uint64_t>(v);
    case FeatureKind::kText: return std::holds_alternative<std::string>(v);
    case FeatureKind::kSequential: return std::holds_alternative<std::vector<std::uint64_t>>(v);
  }
  return false;
}

// Raw values of one item, stored in schema order.
struct FeatureRecord {
  std::vector<FeatureValue> values;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

inline void validate_record(const FeatureRecord& r, const FeatureSchema& schema) {
  if (r.values.size() != schema.size())
    throw SchemaError("record has " + std::to_string(r.values.size()) + " values, schema has " +
                      std::to_string(schema.size()) + " features");
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (!value_matches(schema[i].kind, r.values[i]))
      throw SchemaError("feature '" + schema[i].name + "': value type does not match kind " +
                        std::string(to_string(schema[i].kind)));
}

// Builds a record from named values. Names absent from `values` become
// MISSING; names absent from the schema are rejected.
inline FeatureRecord make_record(const FeatureSchema& schema, const std::map<std::string, FeatureValue>& values) {
  FeatureRecord r;
  r.values.assign(schema.size(), Missing{});
  for (const auto& [name, v] : values) r.values[schema.index_of(name)] = v;
  validate_record(r, schema);
  return r;
}

// Re-keys a record into another schema by feature name. Features the source
// schema lacks come out MISSING.
inline FeatureRecord project_record(const FeatureRecord& r, const FeatureSchema& from, const FeatureSchema& to) {
  FeatureRecord out;
  out.values.assign(to.size(), Missing{});
  for (std::size_t i = 0; i < to.size(); ++i)
    if (auto j = from.find(to[i].name); j && from[*j].kind == to[i].kind) out.values[i] = r.values[*j];
  return out;
}

}  // namespace cvr
