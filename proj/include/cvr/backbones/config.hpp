#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cvr/errors.hpp"

namespace cvr {

struct DcnV2Config {
  std::size_t cross_width = 64;
  std::size_t deep_width = 64;
  std::size_t n_cross_layers = 2;
  std::size_t n_deep_layers = 2;
  std::size_t low_rank = 32;
  friend bool operator==(const DcnV2Config&, const DcnV2Config&) = default;
};

// Branches = max(parallel_blocks, 1), each a chain of max(sequential_blocks, 1)
// mask blocks; at least one count must be non-zero.
struct MaskNetConfig {
  std::size_t cross_width = 64;
  std::size_t deep_width = 64;
  std::size_t parallel_blocks = 2;
  std::size_t sequential_blocks = 1;
  friend bool operator==(const MaskNetConfig&, const MaskNetConfig&) = default;
};

struct TransformerConfig {
  std::size_t d_model = 16;
  std::size_t seq_len = 4;
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t ffn_dim = 32;
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

struct RankMixerConfig {
  std::size_t d_model = 16;
  std::size_t seq_len = 4;
  std::size_t n_layers = 1;
  std::size_t ffn_dim = 32;
  std::size_t n_heads = 2;
  friend bool operator==(const RankMixerConfig&, const RankMixerConfig&) = default;
};

struct BackboneConfig;

struct DhenConfig {
  std::vector<BackboneConfig> members;
  friend bool operator==(const DhenConfig&, const DhenConfig&);
};

struct BackboneConfig {
  std::variant<DcnV2Config, MaskNetConfig, TransformerConfig, RankMixerConfig, DhenConfig> body = MaskNetConfig{};

  BackboneConfig() = default;
  template <class C>
    requires(!std::same_as<std::decay_t<C>, BackboneConfig>)
  BackboneConfig(C c) : body(std::move(c)) {}  // NOLINT(google-explicit-constructor)

  std::string family() const {
    static const char* kNames[] = {"dcnv2", "masknet", "transformer", "rankmixer", "dhen"};
    return kNames[body.index()];
  }

  friend bool operator==(const BackboneConfig& a, const BackboneConfig& b) { return a.body == b.body; }
};

inline bool operator==(const DhenConfig& a, const DhenConfig& b) { return a.members == b.members; }

inline void validate(const BackboneConfig& cfg);

namespace detail {
inline void require_positive(std::size_t v, const char* family, const char* field) {
  if (v < 1) throw ConfigError(std::string(family) + ": " + field + " must be >= 1");
}
}  // namespace detail

inline void validate(const BackboneConfig& cfg) {
  using detail::require_positive;
  std::visit(
      [](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DcnV2Config>) {
          require_positive(c.cross_width, "dcnv2", "cross_width");
          require_positive(c.deep_width, "dcnv2", "deep_width");
          require_positive(c.n_cross_layers, "dcnv2", "n_cross_layers");
          require_positive(c.n_deep_layers, "dcnv2", "n_deep_layers");
          require_positive(c.low_rank, "dcnv2", "low_rank");
          if (c.low_rank > c.cross_width)
            throw ConfigError("dcnv2: low_rank " + std::to_string(c.low_rank) + " exceeds cross_width " +
                              std::to_string(c.cross_width));
        } else if constexpr (std::is_same_v<T, MaskNetConfig>) {
          require_positive(c.cross_width, "masknet", "cross_width");
          require_positive(c.deep_width, "masknet", "deep_width");
          if (c.parallel_blocks == 0 && c.sequential_blocks == 0)
            throw ConfigError("masknet: needs at least one parallel or sequential block");
        } else if constexpr (std::is_same_v<T, TransformerConfig>) {
          require_positive(c.d_model, "transformer", "d_model");
          require_positive(c.seq_len, "transformer", "seq_len");
          require_positive(c.n_layers, "transformer", "n_layers");
          require_positive(c.n_heads, "transformer", "n_heads");
          require_positive(c.ffn_dim, "transformer", "ffn_dim");
          if (c.d_model % c.n_heads != 0)
            throw ConfigError("transformer: d_model " + std::to_string(c.d_model) + " not divisible by n_heads " +
                              std::to_string(c.n_heads));
        } else if constexpr (std::is_same_v<T, RankMixerConfig>) {
          require_positive(c.d_model, "rankmixer", "d_model");
          require_positive(c.seq_len, "rankmixer", "seq_len");
          require_positive(c.n_layers, "rankmixer", "n_layers");
          require_positive(c.n_heads, "rankmixer", "n_heads");
          require_positive(c.ffn_dim, "rankmixer", "ffn_dim");
          if (c.d_model % c.n_heads != 0)
            throw ConfigError("rankmixer: d_model " + std::to_string(c.d_model) + " not divisible by n_heads " +
                              std::to_string(c.n_heads));
          if (c.seq_len % c.n_heads != 0)
            throw ConfigError("rankmixer: seq_len " + std::to_string(c.seq_len) + " not divisible by n_heads " +
                              std::to_string(c.n_heads));
        } else {
          if (c.members.empty()) throw ConfigError("dhen: needs at least one member backbone");
          for (const auto& m : c.members) {
            if (std::holds_alternative<DhenConfig>(m.body)) throw ConfigError("dhen: nested ensembles are not supported");
            validate(m);
          }
        }
      },
      cfg.body);
}

// Scaling factors a grid may sweep, per family.
inline std::vector<std::string> scaling_factors(const BackboneConfig& cfg) {
  switch (cfg.body.index()) {
    case 0: return {"cross_width", "deep_width", "n_cross_layers", "n_deep_layers", "low_rank"};
    case 1: return {"cross_width", "deep_width", "parallel_blocks", "sequential_blocks"};
    case 2:
    case 3: return {"d_model", "seq_len", "n_layers", "n_heads", "ffn_dim"};
    default: return {};
  }
}

inline nlohmann::json to_json(const BackboneConfig& cfg);

inline nlohmann::json to_json(const BackboneConfig& cfg) {
  nlohmann::json j;
  j["family"] = cfg.family();
  std::visit(
      [&j](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DcnV2Config>) {
          j["cross_width"] = c.cross_width;
          j["deep_width"] = c.deep_width;
          j["n_cross_layers"] = c.n_cross_layers;
          j["n_deep_layers"] = c.n_deep_layers;
          j["low_rank"] = c.low_rank;
        } else if constexpr (std::is_same_v<T, MaskNetConfig>) {
          j["cross_width"] = c.cross_width;
          j["deep_width"] = c.deep_width;
          j["parallel_blocks"] = c.parallel_blocks;
          j["sequential_blocks"] = c.sequential_blocks;
        } else if constexpr (std::is_same_v<T, TransformerConfig> || std::is_same_v<T, RankMixerConfig>) {
          j["d_model"] = c.d_model;
          j["seq_len"] = c.seq_len;
          j["n_layers"] = c.n_layers;
          j["n_heads"] = c.n_heads;
          j["ffn_dim"] = c.ffn_dim;
        } else {
          j["members"] = nlohmann::json::array();
          for (const auto& m : c.members) j["members"].push_back(to_json(m));
        }
      },
      cfg.body);
  return j;
}

inline BackboneConfig backbone_from_json(const nlohmann::json& j) {
  const std::string family = j.value("family", "masknet");
  auto get = [&j](const char* key, std::size_t def) -> std::size_t {
    if (!j.contains(key)) return def;
    const auto v = j.at(key).get<long long>();
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  BackboneConfig cfg;
  if (family == "dcnv2") {
    DcnV2Config c;
    c.cross_width = get("cross_width", c.cross_width);
    c.deep_width = get("deep_width", c.deep_width);
    c.n_cross_layers = get("n_cross_layers", c.n_cross_layers);
    c.n_deep_layers = get("n_deep_layers", c.n_deep_layers);
    c.low_rank = get("low_rank", std::min(c.low_rank, c.cross_width));
    cfg = c;
  } else if (family == "masknet") {
    MaskNetConfig c;
    c.cross_width = get("cross_width", c.cross_width);
    c.deep_width = get("deep_width", c.deep_width);
    c.parallel_blocks = get("parallel_blocks", c.parallel_blocks);
    c.sequential_blocks = get("sequential_blocks", c.sequential_blocks);
    cfg = c;
  } else if (family == "transformer" || family == "rankmixer") {
    auto fill = [&](auto c) {
      c.d_model = get("d_model", c.d_model);
      c.seq_len = get("seq_len", c.seq_len);
      c.n_layers = get("n_layers", c.n_layers);
      c.n_heads = get("n_heads", c.n_heads);
      c.ffn_dim = get("ffn_dim", c.ffn_dim);
      return c;
    };
    if (family == "transformer") cfg = fill(TransformerConfig{});
    else cfg = fill(RankMixerConfig{});
  } else if (family == "dhen") {
    DhenConfig c;
    for (const auto& m : j.at("members")) c.members.push_back(backbone_from_json(m));
    cfg = c;
  } else {
    throw ConfigError("unknown backbone family '" + family + "'");
  }
  validate(cfg);
  return cfg;
}

// Returns a copy with one scaling factor replaced.
inline BackboneConfig with_factor(const BackboneConfig& cfg, const std::string& factor, std::size_t value) {
  const auto names = scaling_factors(cfg);
  if (std::find(names.begin(), names.end(), factor) == names.end())
    throw ConfigError("'" + factor + "' is not a scaling factor of " + cfg.family());
  nlohmann::json j = to_json(cfg);
  j[factor] = value;
  return backbone_from_json(j);
}

}  // namespace cvr
