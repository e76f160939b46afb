#pragma once

#include <cstdint>
#include <variant>

#include "cvr/backbones/backbone.hpp"
#include "cvr/backbones/config.hpp"

// Analytic inference FLOPs. A multiply-accumulate is 2 FLOPs, so an in->out
// linear map costs 2*in*out per row (bias adds are not counted). Activations,
// normalizations, softmax, Hadamard products, residual adds and pooling cost
// 1 FLOP per element. Pure permutations are free.
namespace cvr {

inline std::uint64_t linear_flops(std::uint64_t in, std::uint64_t out, std::uint64_t rows = 1) {
  return 2 * in * out * rows;
}

namespace detail {

inline std::uint64_t body_flops(const BackboneConfig& cfg) {
  return std::visit(
      [](const auto& c) -> std::uint64_t {
        using T = std::decay_t<decltype(c)>;
        std::uint64_t f = 0;
        if constexpr (std::is_same_v<T, DcnV2Config>) {
          const std::uint64_t w = c.cross_width, r = c.low_rank;
          f += c.n_cross_layers * (linear_flops(w, r) + linear_flops(r, w) + 2 * w);
          std::uint64_t in = w;
          for (std::size_t l = 0; l < c.n_deep_layers; ++l) {
            f += linear_flops(in, c.deep_width) + c.deep_width;
            in = c.deep_width;
          }
        } else if constexpr (std::is_same_v<T, MaskNetConfig>) {
          const std::uint64_t w = c.cross_width;
          const std::uint64_t blocks = masknet_branches(c) * masknet_chain(c);
          f += blocks * (2 * linear_flops(w, w) + 2 * w);
          f += linear_flops(masknet_branches(c) * w, c.deep_width) + c.deep_width;
        } else if constexpr (std::is_same_v<T, TransformerConfig>) {
          const std::uint64_t s = c.seq_len, d = c.d_model, h = c.n_heads, ff = c.ffn_dim;
          std::uint64_t layer = 0;
          layer += 2 * s * d;                        // two layer norms
          layer += 3 * linear_flops(d, d, s);        // Q, K, V
          layer += 2 * s * s * d + h * s * s;        // scores and their scaling
          layer += h * s * s;                        // softmax
          layer += 2 * s * s * d;                    // probs x V
          layer += linear_flops(d, d, s);            // output projection
          layer += linear_flops(d, ff, s) + s * ff;  // FFN up + relu
          layer += linear_flops(ff, d, s);           // FFN down
          layer += 2 * s * d;                        // two residuals
          f += c.n_layers * layer;
          f += 2 * s * d + linear_flops(2 * d, d);  // pool, first-token gather, output linear
        } else if constexpr (std::is_same_v<T, RankMixerConfig>) {
          const std::uint64_t s = c.seq_len, d = c.d_model, ff = c.ffn_dim;
          f += c.n_layers * s * (linear_flops(d, ff) + ff + linear_flops(ff, d) + d);
          f += s * d;
        } else {
          for (const auto& m : c.members) f += body_flops(m);
        }
        return f;
      },
      cfg.body);
}

}  // namespace detail

// FLOPs of one forward pass over `batch` rows of a D-wide x0.
inline std::uint64_t count_flops(const BackboneConfig& cfg, std::uint64_t input_dim, std::uint64_t batch = 1) {
  const std::uint64_t pw = projected_width(cfg);
  return batch * (linear_flops(input_dim, pw) + pw + detail::body_flops(cfg));
}

}  // namespace cvr
