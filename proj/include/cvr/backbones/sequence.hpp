#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cvr/backbones/config.hpp"
#include "cvr/backbones/cross.hpp"
#include "cvr/errors.hpp"
#include "cvr/numerics/graph.hpp"
#include "cvr/numerics/params.hpp"

// Sequence family over "global tokens": the projected input is split
// row-major into seq_len tokens of d_model. Token grids travel as
// [B*S x d] matrices (row b*S + t is token t of example b); the public
// entry points accept and return the [B x S x d] view.
namespace cvr {

inline constexpr double kLayerNormEps = 1e-5;

// relu(x0 W + b) reshaped into [B x seq_len x d_model].
inline Var tokenize_global(Var x0, Var w_proj, Var b, std::size_t seq_len, std::size_t d_model) {
  Graph& g = *x0.graph;
  const Shape& sw = g.shape(w_proj);
  if (sw.size() != 2 || sw[1] != seq_len * d_model)
    throw DimensionError("tokenize_global: W_proj " + shape_str(sw) + " does not produce " + std::to_string(seq_len) +
                         " tokens of " + std::to_string(d_model));
  Var flat = project_input(x0, w_proj, b);
  return reshape(flat, {g.shape(x0)[0], seq_len, d_model});
}

namespace detail {

inline Var as_token_rows(Var tokens) {
  Graph& g = *tokens.graph;
  const Shape& s = g.shape(tokens);
  if (s.size() == 2) return tokens;
  if (s.size() != 3) throw DimensionError("expected a [B x S x d] token grid, got " + shape_str(s));
  return reshape(tokens, {s[0] * s[1], s[2]});
}

// Rows t, t+S, t+2S, ... : token t of every example.
inline std::vector<std::size_t> token_rows(std::size_t batch, std::size_t seq_len, std::size_t t) {
  std::vector<std::size_t> idx(batch);
  for (std::size_t b = 0; b < batch; ++b) idx[b] = b * seq_len + t;
  return idx;
}

}  // namespace detail

// Full bidirectional multi-head attention over [B*S x d] token rows.
inline Var multi_head_attention(ParamBinder& p, const std::string& prefix, Var x, std::size_t seq_len,
                                std::size_t n_heads) {
  Graph& g = *x.graph;
  const std::size_t rows = g.shape(x)[0], d = g.shape(x)[1];
  const std::size_t batch = rows / seq_len, dh = d / n_heads;
  Var q = matmul(x, p(prefix + "/Wq"));
  Var k = matmul(x, p(prefix + "/Wk"));
  Var v = matmul(x, p(prefix + "/Wv"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    auto head = [&](Var m) { return reshape(slice_cols(m, h * dh, dh), {batch, seq_len, dh}); };
    Var scores = scale(bmm(head(q), head(k), /*transpose_b=*/true), inv_sqrt);
    Var probs = softmax_rows(scores);
    heads.push_back(reshape(bmm(probs, head(v)), {rows, dh}));
  }
  Var cat = heads.size() == 1 ? heads[0] : concat_cols(heads);
  return linear(p, prefix + "/Wo", cat);
}

inline void init_transformer_layers(ParamStore& s, const std::string& prefix, const TransformerConfig& c,
                                    std::uint64_t seed) {
  const std::size_t d = c.d_model;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string n = prefix + "/layer" + std::to_string(l);
    for (const char* role : {"/attn/Wq", "/attn/Wk", "/attn/Wv"}) s.set(n + role, init_weight(n + role, d, d, seed));
    add_linear(s, n + "/attn/Wo", d, d, seed);
    add_linear(s, n + "/ffn1", d, c.ffn_dim, seed);
    add_linear(s, n + "/ffn2", c.ffn_dim, d, seed);
  }
}

inline void init_transformer_body(ParamStore& s, const std::string& prefix, const TransformerConfig& c,
                                  std::uint64_t seed) {
  init_transformer_layers(s, prefix, c, seed);
  add_linear(s, prefix + "/output", 2 * c.d_model, c.d_model, seed);
}

// n_layers pre-norm blocks: x += MHA(LN(x)); x += FFN(LN(x)). No positional
// encoding. Returns the token grid in the input's layout.
inline Var transformer_encode(ParamBinder& p, const std::string& prefix, const TransformerConfig& c, Var tokens) {
  Graph& g = *tokens.graph;
  const Shape in_shape = g.shape(tokens);
  Var x = detail::as_token_rows(tokens);
  if (g.shape(x)[1] != c.d_model || g.shape(x)[0] % c.seq_len != 0)
    throw DimensionError("transformer: token grid " + shape_str(in_shape) + " does not match config");
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string n = prefix + "/layer" + std::to_string(l);
    x = add(x, multi_head_attention(p, n + "/attn", layer_norm_rows(x, kLayerNormEps), c.seq_len, c.n_heads));
    Var h = relu(linear(p, n + "/ffn1", layer_norm_rows(x, kLayerNormEps)));
    x = add(x, linear(p, n + "/ffn2", h));
  }
  return in_shape.size() == 3 ? reshape(x, in_shape) : x;
}

// Encoder, then [mean over tokens | first token] -> linear -> d_model.
inline Var transformer_forward(ParamBinder& p, const std::string& prefix, const TransformerConfig& c, Var tokens) {
  validate(BackboneConfig(c));
  Var x = detail::as_token_rows(transformer_encode(p, prefix, c, tokens));
  const std::size_t batch = x.graph->shape(x)[0] / c.seq_len;
  Var pooled = mean_pool_rows(x, c.seq_len);
  Var first = gather_rows(x, detail::token_rows(batch, c.seq_len, 0));
  return linear(p, prefix + "/output", concat_cols({pooled, first}));
}

// ---------------------------------------------------------------------------
// RankMixer

// Element permutation of one example's [S x d] token block: new token t takes
// head slice h from token (t + h) mod S.
inline std::vector<std::size_t> token_mixing_permutation(std::size_t seq_len, std::size_t d_model,
                                                         std::size_t n_heads) {
  if (n_heads == 0 || d_model % n_heads != 0) throw ConfigError("token mixing: d_model not divisible by n_heads");
  const std::size_t dh = d_model / n_heads;
  std::vector<std::size_t> perm(seq_len * d_model);
  for (std::size_t t = 0; t < seq_len; ++t)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t k = 0; k < dh; ++k)
        perm[t * d_model + h * dh + k] = ((t + h) % seq_len) * d_model + h * dh + k;
  return perm;
}

inline Var token_mix(Var tokens, std::size_t seq_len, std::size_t d_model, std::size_t n_heads) {
  return permute_within_blocks(tokens, token_mixing_permutation(seq_len, d_model, n_heads));
}

inline void init_rankmixer_body(ParamStore& s, const std::string& prefix, const RankMixerConfig& c,
                                std::uint64_t seed) {
  for (std::size_t l = 0; l < c.n_layers; ++l)
    for (std::size_t t = 0; t < c.seq_len; ++t) {
      const std::string n = prefix + "/layer" + std::to_string(l) + "/tok" + std::to_string(t);
      add_linear(s, n + "/ffn1", c.d_model, c.ffn_dim, seed);
      add_linear(s, n + "/ffn2", c.ffn_dim, c.d_model, seed);
    }
}

// Each layer: x = mix(x); x += per-token FFN(x). Mean-pooled to d_model.
inline Var rankmixer_forward(ParamBinder& p, const std::string& prefix, const RankMixerConfig& c, Var tokens) {
  validate(BackboneConfig(c));
  Graph& g = *tokens.graph;
  Var x = detail::as_token_rows(tokens);
  const std::size_t rows = g.shape(x)[0];
  if (g.shape(x)[1] != c.d_model || rows % c.seq_len != 0)
    throw DimensionError("rankmixer: token grid " + shape_str(g.shape(tokens)) + " does not match config");
  const std::size_t batch = rows / c.seq_len;
  // Token-major rows (t*B + b) back to example-major (b*S + t).
  std::vector<std::size_t> restore(rows);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < c.seq_len; ++t) restore[b * c.seq_len + t] = t * batch + b;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    x = token_mix(x, c.seq_len, c.d_model, c.n_heads);
    std::vector<Var> per_token;
    for (std::size_t t = 0; t < c.seq_len; ++t) {
      const std::string n = prefix + "/layer" + std::to_string(l) + "/tok" + std::to_string(t);
      Var xt = gather_rows(x, detail::token_rows(batch, c.seq_len, t));
      per_token.push_back(linear(p, n + "/ffn2", relu(linear(p, n + "/ffn1", xt))));
    }
    x = add(x, gather_rows(concat_rows(per_token), restore));
  }
  return mean_pool_rows(x, c.seq_len);
}

}  // namespace cvr
