#pragma once

#include <string>
#include <vector>

#include "cvr/backbones/config.hpp"
#include "cvr/errors.hpp"
#include "cvr/numerics/graph.hpp"
#include "cvr/numerics/params.hpp"

// Deep & cross family. Vectors are rows, so a stored weight W of shape
// [in x out] maps x -> x W. In that convention the low-rank cross product
// U V x of the column form is x V U with V stored [w x r] and U [r x w].
namespace cvr {

// relu(x0 W + b). The only layer whose shape depends on the feature width D.
inline Var project_input(Var x0, Var w, Var b) {
  Graph& g = *x0.graph;
  const Shape& sx = g.shape(x0);
  const Shape& sw = g.shape(w);
  if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[0])
    throw DimensionError("project_input: x0 " + shape_str(sx) + " does not match W_in " + shape_str(sw));
  return relu(add_bias(matmul(x0, w), b));
}

// x_{l+1} = x0 * (x_l V U + b) + x_l
inline Var dcn_cross_layer(Var x_l, Var x_0, Var u, Var v, Var b) {
  Graph& g = *x_l.graph;
  const Shape& su = g.shape(u);
  const Shape& sv = g.shape(v);
  const std::size_t w = g.shape(x_l).back();
  if (sv.size() != 2 || su.size() != 2 || sv[0] != w || su[1] != w || sv[1] != su[0])
    throw DimensionError("dcn_cross_layer: V " + shape_str(sv) + " / U " + shape_str(su) + " do not fit width " +
                         std::to_string(w));
  if (sv[1] > w)
    throw ConfigError("dcn_cross_layer: rank " + std::to_string(sv[1]) + " exceeds width " + std::to_string(w));
  if (g.shape(x_0) != g.shape(x_l))
    throw DimensionError("dcn_cross_layer: x0 " + shape_str(g.shape(x_0)) + " vs x_l " + shape_str(g.shape(x_l)));
  Var inner = add_bias(matmul(matmul(x_l, v), u), b);
  return add(mul(x_0, inner), x_l);
}

// x_out = (relu(x0 V + b) U) * x_in. No residual.
inline Var masknet_block(Var x_in, Var x_0, Var u, Var v, Var b) {
  Graph& g = *x_in.graph;
  if (g.shape(x_in) != g.shape(x_0))
    throw DimensionError("masknet_block: x_in " + shape_str(g.shape(x_in)) + " vs x0 " + shape_str(g.shape(x_0)));
  const Shape& sv = g.shape(v);
  const Shape& su = g.shape(u);
  const std::size_t w = g.shape(x_0).back();
  if (sv.size() != 2 || su.size() != 2 || sv[0] != w || su[1] != w || sv[1] != su[0])
    throw DimensionError("masknet_block: V " + shape_str(sv) + " / U " + shape_str(su) + " do not fit width " +
                         std::to_string(w));
  Var mask = matmul(relu(add_bias(matmul(x_0, v), b)), u);
  return mul(mask, x_in);
}

// --- parameter layout ------------------------------------------------------

inline void init_dcnv2_body(ParamStore& s, const std::string& prefix, const DcnV2Config& c, std::uint64_t seed) {
  for (std::size_t l = 0; l < c.n_cross_layers; ++l) {
    const std::string p = prefix + "/cross" + std::to_string(l);
    s.set(p + "/V", init_weight(p + "/V", c.cross_width, c.low_rank, seed));
    s.set(p + "/U", init_weight(p + "/U", c.low_rank, c.cross_width, seed));
    s.set(p + "/b", Tensor::zeros({c.cross_width}));
  }
  std::size_t in = c.cross_width;
  for (std::size_t l = 0; l < c.n_deep_layers; ++l) {
    add_linear(s, prefix + "/deep" + std::to_string(l), in, c.deep_width, seed);
    in = c.deep_width;
  }
}

inline std::string mask_block_name(const std::string& prefix, std::size_t branch, std::size_t step) {
  return prefix + "/block" + std::to_string(branch) + "_" + std::to_string(step);
}

inline std::size_t masknet_branches(const MaskNetConfig& c) { return c.parallel_blocks ? c.parallel_blocks : 1; }
inline std::size_t masknet_chain(const MaskNetConfig& c) { return c.sequential_blocks ? c.sequential_blocks : 1; }

inline void init_masknet_body(ParamStore& s, const std::string& prefix, const MaskNetConfig& c, std::uint64_t seed) {
  const std::size_t w = c.cross_width;
  for (std::size_t p = 0; p < masknet_branches(c); ++p)
    for (std::size_t q = 0; q < masknet_chain(c); ++q) {
      const std::string n = mask_block_name(prefix, p, q);
      s.set(n + "/V", init_weight(n + "/V", w, w, seed));
      s.set(n + "/U", init_weight(n + "/U", w, w, seed));
      s.set(n + "/b", Tensor::zeros({w}));
    }
  add_linear(s, prefix + "/deep", masknet_branches(c) * w, c.deep_width, seed);
}

// --- bodies (input already projected to cross_width) ------------------------

// Cross tower and deep tower side by side, concatenated.
inline Var dcnv2_body(ParamBinder& p, const std::string& prefix, const DcnV2Config& c, Var x0) {
  Var x = x0;
  for (std::size_t l = 0; l < c.n_cross_layers; ++l) {
    const std::string n = prefix + "/cross" + std::to_string(l);
    x = dcn_cross_layer(x, x0, p(n + "/U"), p(n + "/V"), p(n + "/b"));
  }
  Var h = x0;
  for (std::size_t l = 0; l < c.n_deep_layers; ++l) h = relu(linear(p, prefix + "/deep" + std::to_string(l), h));
  return concat_cols({x, h});
}

// Parallel branches, each a chain M_n(...M_1(x0, x0)..., x0), concatenated.
// This is the mask-block output before the deep layer.
inline Var masknet_cross_output(ParamBinder& p, const std::string& prefix, const MaskNetConfig& c, Var x0) {
  std::vector<Var> outs;
  for (std::size_t b = 0; b < masknet_branches(c); ++b) {
    Var x = x0;
    for (std::size_t q = 0; q < masknet_chain(c); ++q) {
      const std::string n = mask_block_name(prefix, b, q);
      x = masknet_block(x, x0, p(n + "/U"), p(n + "/V"), p(n + "/b"));
    }
    outs.push_back(x);
  }
  return outs.size() == 1 ? outs[0] : concat_cols(outs);
}

// The FC-DNN (one deep_width relu layer) follows the mask blocks.
inline Var masknet_body(ParamBinder& p, const std::string& prefix, const MaskNetConfig& c, Var x0) {
  return relu(linear(p, prefix + "/deep", masknet_cross_output(p, prefix, c, x0)));
}

}  // namespace cvr
