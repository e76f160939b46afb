#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvr/errors.hpp"
#include "cvr/numerics/graph.hpp"
#include "cvr/numerics/params.hpp"

// Multi-gate mixture of experts over the backbone's hidden vector.
namespace cvr {

struct MmoeConfig {
  std::size_t n_experts = 4;
  std::size_t expert_dim = 0;  // 0 -> hidden width
  std::vector<std::string> tasks{"click", "purchase"};
  std::string primary_task = "purchase";

  std::size_t expert_width(std::size_t hidden) const { return expert_dim ? expert_dim : hidden; }

  std::size_t task_index(const std::string& t) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i] == t) return i;
    throw ConfigError("unknown task '" + t + "'");
  }
  std::size_t primary_index() const { return task_index(primary_task); }

  void validate() const {
    if (n_experts < 1) throw ConfigError("mmoe: n_experts must be >= 1");
    if (tasks.empty()) throw ConfigError("mmoe: at least one task is required");
    std::set<std::string> seen;
    for (const auto& t : tasks) {
      if (t.empty() || t.find_first_of(" ,/\n") != std::string::npos)
        throw ConfigError("mmoe: invalid task name '" + t + "'");
      if (!seen.insert(t).second) throw ConfigError("mmoe: duplicate task '" + t + "'");
    }
    task_index(primary_task);
  }

  friend bool operator==(const MmoeConfig&, const MmoeConfig&) = default;
};

inline nlohmann::json to_json(const MmoeConfig& c) {
  return {{"n_experts", c.n_experts}, {"expert_dim", c.expert_dim}, {"tasks", c.tasks}, {"primary_task", c.primary_task}};
}

inline MmoeConfig mmoe_from_json(const nlohmann::json& j) {
  MmoeConfig c;
  c.n_experts = j.value("n_experts", c.n_experts);
  c.expert_dim = j.value("expert_dim", c.expert_dim);
  if (j.contains("tasks")) c.tasks = j.at("tasks").get<std::vector<std::string>>();
  c.primary_task = j.value("primary_task", c.tasks.back());
  c.validate();
  return c;
}

inline std::string expert_prefix(std::size_t i) { return "mmoe/expert" + std::to_string(i); }
inline std::string gate_prefix(const std::string& task) { return "mmoe/gate_" + task; }
inline std::string head_prefix(const std::string& task) { return "mmoe/head_" + task; }

inline void init_task_head(ParamStore& s, const MmoeConfig& c, const std::string& task, std::size_t hidden,
                           std::uint64_t seed) {
  add_linear(s, gate_prefix(task), hidden, c.n_experts, seed);
  add_linear(s, head_prefix(task), c.expert_width(hidden), 1, seed);
}

inline void init_mmoe(ParamStore& s, const MmoeConfig& c, std::size_t hidden, std::uint64_t seed) {
  c.validate();
  for (std::size_t i = 0; i < c.n_experts; ++i) add_linear(s, expert_prefix(i), hidden, c.expert_width(hidden), seed);
  for (const auto& t : c.tasks) init_task_head(s, c, t, hidden, seed);
}

struct MmoeOutput {
  std::vector<Var> logits;  // per task, [B x 1]
  std::vector<Var> gates;   // per task, [B x n_experts]
};

inline MmoeOutput mmoe_forward(ParamBinder& p, const MmoeConfig& c, Var hidden) {
  Graph& g = *hidden.graph;
  const Shape& sh = g.shape(hidden);
  if (sh.size() != 2) throw DimensionError("mmoe: hidden must be [B x H], got " + shape_str(sh));
  const std::size_t h = sh[1];
  std::vector<Var> experts;
  for (std::size_t i = 0; i < c.n_experts; ++i) {
    const Shape& sw = g.shape(p(expert_prefix(i) + "/W"));
    if (sw[0] != h || sw[1] != c.expert_width(h))
      throw DimensionError("mmoe: expert weight " + shape_str(sw) + " does not fit hidden width " + std::to_string(h));
    experts.push_back(relu(linear(p, expert_prefix(i), hidden)));
  }
  MmoeOutput out;
  for (const auto& t : c.tasks) {
    const Shape& sg = g.shape(p(gate_prefix(t) + "/W"));
    if (sg[0] != h || sg[1] != c.n_experts)
      throw DimensionError("mmoe: gate '" + t + "' weight " + shape_str(sg) + " does not match config");
    Var gate = softmax_rows(linear(p, gate_prefix(t), hidden));
    Var rep = experts.size() == 1 ? mul_col(experts[0], gate) : Var{};
    if (experts.size() > 1) {
      rep = mul_col(experts[0], slice_cols(gate, 0, 1));
      for (std::size_t i = 1; i < experts.size(); ++i) rep = add(rep, mul_col(experts[i], slice_cols(gate, i, 1)));
    }
    out.gates.push_back(gate);
    out.logits.push_back(linear(p, head_prefix(t), rep));
  }
  return out;
}

}  // namespace cvr
