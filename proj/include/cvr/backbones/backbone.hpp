#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "cvr/backbones/config.hpp"
#include "cvr/backbones/cross.hpp"
#include "cvr/backbones/sequence.hpp"
#include "cvr/errors.hpp"
#include "cvr/numerics/graph.hpp"
#include "cvr/numerics/params.hpp"

// Family dispatch. Every backbone is `project_input` (the only D-dependent
// layer, stored as `<family>/input/{W,b}`) followed by a D-independent body.
namespace cvr {

// Width of the projected input the body consumes.
inline std::size_t projected_width(const BackboneConfig& cfg) {
  return std::visit(
      [](const auto& c) -> std::size_t {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DcnV2Config> || std::is_same_v<T, MaskNetConfig>) return c.cross_width;
        else if constexpr (std::is_same_v<T, TransformerConfig> || std::is_same_v<T, RankMixerConfig>)
          return c.seq_len * c.d_model;
        else {
          std::size_t w = 0;
          for (const auto& m : c.members) w += projected_width(m);
          return w;
        }
      },
      cfg.body);
}

// Width of the hidden vector handed to the multi-task head.
inline std::size_t hidden_width(const BackboneConfig& cfg) {
  return std::visit(
      [](const auto& c) -> std::size_t {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DcnV2Config>) return c.cross_width + c.deep_width;
        else if constexpr (std::is_same_v<T, MaskNetConfig>) return c.deep_width;
        else if constexpr (std::is_same_v<T, TransformerConfig> || std::is_same_v<T, RankMixerConfig>)
          return c.d_model;
        else {
          std::size_t w = 0;
          for (const auto& m : c.members) w += hidden_width(m);
          return w;
        }
      },
      cfg.body);
}

inline std::string input_prefix(const BackboneConfig& cfg) { return cfg.family() + "/input"; }

inline std::string dhen_member_prefix(std::size_t i, const BackboneConfig& member) {
  return "dhen/m" + std::to_string(i) + "/" + member.family();
}

// Parameters of the body only, under `prefix`.
inline void init_body(ParamStore& s, const std::string& prefix, const BackboneConfig& cfg, std::uint64_t seed) {
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DcnV2Config>) init_dcnv2_body(s, prefix, c, seed);
        else if constexpr (std::is_same_v<T, MaskNetConfig>) init_masknet_body(s, prefix, c, seed);
        else if constexpr (std::is_same_v<T, TransformerConfig>) init_transformer_body(s, prefix, c, seed);
        else if constexpr (std::is_same_v<T, RankMixerConfig>) init_rankmixer_body(s, prefix, c, seed);
        else throw ConfigError("dhen: nested ensembles are not supported");
      },
      cfg.body);
}

// Body forward from the projected input [B x projected_width].
inline Var body_forward(ParamBinder& p, const std::string& prefix, const BackboneConfig& cfg, Var projected) {
  return std::visit(
      [&](const auto& c) -> Var {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DcnV2Config>) return dcnv2_body(p, prefix, c, projected);
        else if constexpr (std::is_same_v<T, MaskNetConfig>) return masknet_body(p, prefix, c, projected);
        else if constexpr (std::is_same_v<T, TransformerConfig>) {
          const std::size_t b = projected.graph->shape(projected)[0];
          return transformer_forward(p, prefix, c, reshape(projected, {b, c.seq_len, c.d_model}));
        } else if constexpr (std::is_same_v<T, RankMixerConfig>) {
          const std::size_t b = projected.graph->shape(projected)[0];
          return rankmixer_forward(p, prefix, c, reshape(projected, {b, c.seq_len, c.d_model}));
        } else {
          throw ConfigError("dhen: nested ensembles are not supported");
        }
      },
      cfg.body);
}

// All parameters of a backbone reading a D-wide x0.
inline void init_backbone(ParamStore& s, const BackboneConfig& cfg, std::size_t input_dim, std::uint64_t seed) {
  validate(cfg);
  if (input_dim < 1) throw ConfigError("backbone input width must be >= 1");
  add_linear(s, input_prefix(cfg), input_dim, projected_width(cfg), seed);
  if (const auto* d = std::get_if<DhenConfig>(&cfg.body)) {
    for (std::size_t i = 0; i < d->members.size(); ++i)
      init_body(s, dhen_member_prefix(i, d->members[i]), d->members[i], seed);
  } else {
    init_body(s, cfg.family(), cfg, seed);
  }
}

// Re-draws only the input projection (used when the feature width changes).
inline void init_input_projection(ParamStore& s, const BackboneConfig& cfg, std::size_t input_dim,
                                  std::uint64_t seed) {
  add_linear(s, input_prefix(cfg), input_dim, projected_width(cfg), seed);
}

// Members share one projection whose output columns are split per member,
// then run in parallel; hidden outputs are concatenated.
inline Var dhen_forward(ParamBinder& p, const DhenConfig& c, Var x0) {
  if (c.members.empty()) throw ConfigError("dhen: needs at least one member backbone");
  Var projected = project_input(x0, p("dhen/input/W"), p("dhen/input/b"));
  std::vector<Var> outs;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < c.members.size(); ++i) {
    const std::size_t w = projected_width(c.members[i]);
    Var part = c.members.size() == 1 ? projected : slice_cols(projected, offset, w);
    outs.push_back(body_forward(p, dhen_member_prefix(i, c.members[i]), c.members[i], part));
    offset += w;
  }
  return outs.size() == 1 ? outs[0] : concat_cols(outs);
}

inline Var backbone_forward(ParamBinder& p, const BackboneConfig& cfg, Var x0) {
  if (const auto* d = std::get_if<DhenConfig>(&cfg.body)) return dhen_forward(p, *d, x0);
  const std::string in = input_prefix(cfg);
  Var projected = project_input(x0, p(in + "/W"), p(in + "/b"));
  return body_forward(p, cfg.family(), cfg, projected);
}

}  // namespace cvr
