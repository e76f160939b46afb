#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/features/encode.hpp"
#include "cvr/features/record.hpp"
#include "cvr/features/schema.hpp"

namespace cvr {

// One query's result list with binary labels per task.
struct RankingGroup {
  std::uint64_t query_id = 0;
  std::uint32_t day = 0;
  std::vector<FeatureRecord> items;
  std::vector<std::vector<std::uint8_t>> labels;  // [task][item], dataset task order
  std::vector<double> utility;                    // planted ground truth; empty for real data
};

struct Dataset {
  FeatureSchema schema;
  std::vector<std::string> tasks{"click", "purchase"};
  std::vector<RankingGroup> groups;

  std::size_t task_index(const std::string& t) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i] == t) return i;
    throw SchemaError("dataset has no task '" + t + "'");
  }
  std::size_t item_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.items.size();
    return n;
  }
};

inline void validate_group(const RankingGroup& g, std::size_t n_tasks, std::size_t primary) {
  if (g.items.empty()) throw ContractError("group " + std::to_string(g.query_id) + " has no items");
  if (g.labels.size() != n_tasks) throw ContractError("group " + std::to_string(g.query_id) + ": label task count");
  for (const auto& l : g.labels)
    if (l.size() != g.items.size()) throw ContractError("group " + std::to_string(g.query_id) + ": label length");
  bool any = false;
  for (auto y : g.labels[primary]) any = any || y != 0;
  if (!any) throw ContractError("group " + std::to_string(g.query_id) + " has no primary-task positive");
}

// Records reduced to their table-independent encoding, plus float labels.
struct EncodedGroup {
  std::uint64_t query_id = 0;
  std::vector<EncodedItem> items;
  std::vector<std::vector<double>> labels;  // [task][item], model task order
};

// `tasks` picks and orders the label rows to match the model's heads.
inline std::vector<EncodedGroup> encode_groups(const Dataset& data, const FeatureSchema& schema, const NormStats& stats,
                                               const std::vector<std::string>& tasks) {
  std::vector<std::size_t> idx;
  for (const auto& t : tasks) idx.push_back(data.task_index(t));
  const bool same_schema = data.schema == schema;
  std::vector<EncodedGroup> out;
  out.reserve(data.groups.size());
  for (const auto& g : data.groups) {
    EncodedGroup e;
    e.query_id = g.query_id;
    e.items.reserve(g.items.size());
    for (const auto& r : g.items)
      e.items.push_back(encode_item(same_schema ? r : project_record(r, data.schema, schema), schema, stats));
    for (std::size_t t : idx) e.labels.emplace_back(g.labels[t].begin(), g.labels[t].end());
    out.push_back(std::move(e));
  }
  return out;
}

// All item records of a dataset, for normalization statistics.
inline std::vector<FeatureRecord> all_records(const Dataset& data, const FeatureSchema& schema) {
  std::vector<FeatureRecord> out;
  out.reserve(data.item_count());
  const bool same_schema = data.schema == schema;
  for (const auto& g : data.groups)
    for (const auto& r : g.items) out.push_back(same_schema ? r : project_record(r, data.schema, schema));
  return out;
}

}  // namespace cvr
