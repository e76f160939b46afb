#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "../support/gradcheck.hpp"
#include "../support/tiny.hpp"
#include "cvr/backbones/backbone.hpp"
#include "cvr/backbones/flops.hpp"
#include "cvr/errors.hpp"

using namespace cvr;
using cvr::testing::random_tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.shape[0], std::vector<double>(t.shape[1]));
  for (std::size_t i = 0; i < t.shape[0]; ++i)
    for (std::size_t j = 0; j < t.shape[1]; ++j) m[i][j] = t.data[i * t.shape[1] + j];
  return m;
}

std::vector<double> vec_mat(const std::vector<double>& x, const Mat& w) {
  std::vector<double> y(w[0].size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[i] * w[i][j];
  return y;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t n = t.shape.back();
  return {t.data.begin() + static_cast<std::ptrdiff_t>(r * n), t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * n)};
}

void expect_near_vec(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-12) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

Tensor forward(const BackboneConfig& cfg, const ParamStore& store, const Tensor& x0) {
  Graph g;
  ParamBinder p(g, store, false);
  return g.tensor(backbone_forward(p, cfg, g.constant(x0)));
}

}  // namespace

// --- project_input -------------------------------------------------------------

TEST(ProjectInput, Examples) {
  Graph g;
  Var x = g.constant(random_tensor({2, 4}, 1));
  auto z = g.value(project_input(x, g.constant(Tensor::zeros({4, 3})), g.constant(Tensor::zeros({3}))));
  EXPECT_EQ(z, std::vector<double>(6, 0.0));
  auto pos = random_tensor({2, 4}, 2, 0.0, 1.0);
  auto id = g.value(project_input(g.constant(pos), g.constant(Tensor::identity(4)), g.constant(Tensor::zeros({4}))));
  EXPECT_EQ(id, pos.data);
  EXPECT_THROW(project_input(x, g.constant(Tensor::zeros({5, 3})), g.constant(Tensor::zeros({3}))), DimensionError);
}

TEST(ProjectInput, MatchesComposition) {
  auto x = random_tensor({3, 5}, 3), w = random_tensor({5, 4}, 4), b = random_tensor({4}, 5);
  Graph g;
  auto got = g.value(project_input(g.constant(x), g.constant(w), g.constant(b)));
  auto want = g.value(relu(add_bias(matmul(g.constant(x), g.constant(w)), g.constant(b))));
  EXPECT_EQ(got, want);
}

// --- DCNv2 cross layer -----------------------------------------------------------

TEST(DcnCross, ZeroUIsResidualOnly) {
  Graph g;
  auto xl = random_tensor({2, 4}, 6), x0 = random_tensor({2, 4}, 7);
  auto out = g.value(dcn_cross_layer(g.constant(xl), g.constant(x0), g.constant(Tensor::zeros({2, 4})),
                                     g.constant(random_tensor({4, 2}, 8)), g.constant(Tensor::zeros({4}))));
  EXPECT_EQ(out, xl.data);
}

TEST(DcnCross, IdentityWeightsGolden) {
  Graph g;
  Var x = g.constant(Tensor::matrix(1, 2, {1, 2}));
  auto out = g.value(dcn_cross_layer(x, x, g.constant(Tensor::identity(2)), g.constant(Tensor::identity(2)),
                                     g.constant(Tensor::zeros({2}))));
  EXPECT_EQ(out, (std::vector<double>{2, 6}));
}

TEST(DcnCross, ScalarLoopOracle) {
  const std::size_t w = 6, r = 3;
  auto xl = random_tensor({3, w}, 9), x0 = random_tensor({3, w}, 10), u = random_tensor({r, w}, 11),
       v = random_tensor({w, r}, 12), b = random_tensor({w}, 13);
  Graph g;
  Tensor out = g.tensor(dcn_cross_layer(g.constant(xl), g.constant(x0), g.constant(u), g.constant(v), g.constant(b)));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < w; ++i) {
      double inner = b.data[i];
      for (std::size_t k = 0; k < r; ++k) {
        double vx = 0.0;
        for (std::size_t j = 0; j < w; ++j) vx += xl.data[n * w + j] * v.data[j * r + k];
        inner += vx * u.data[k * w + i];
      }
      EXPECT_NEAR(out.data[n * w + i], x0.data[n * w + i] * inner + xl.data[n * w + i], 1e-12);
    }
}

TEST(DcnCross, RankAboveWidthIsConfigError) {
  Graph g;
  Var x = g.constant(random_tensor({1, 2}, 1));
  EXPECT_THROW(dcn_cross_layer(x, x, g.constant(Tensor::zeros({3, 2})), g.constant(Tensor::zeros({2, 3})),
                               g.constant(Tensor::zeros({2}))),
               ConfigError);
  EXPECT_THROW(validate(BackboneConfig(DcnV2Config{4, 4, 1, 1, 5})), ConfigError);
}

// --- MaskNet -----------------------------------------------------------------------

TEST(MaskBlock, NegativePreactivationKillsMask) {
  Graph g;
  Var x0 = g.constant(Tensor::matrix(1, 2, {1, 1}));
  auto out = g.value(masknet_block(g.constant(random_tensor({1, 2}, 1)), x0, g.constant(random_tensor({2, 2}, 2)),
                                   g.constant(Tensor::filled({2, 2}, -1.0)), g.constant(Tensor::zeros({2}))));
  EXPECT_EQ(out, (std::vector<double>{0, 0}));
}

TEST(MaskBlock, UnitMaskPassesInputThrough) {
  // x0 = [1, 0]: relu(x0 V) = [1, 0] with V = I; U row 0 all ones -> mask = [1, 1].
  Graph g;
  auto xin = random_tensor({1, 2}, 3);
  Tensor u = Tensor::matrix(2, 2, {1, 1, 0, 0});
  auto out = g.value(masknet_block(g.constant(xin), g.constant(Tensor::matrix(1, 2, {1, 0})), g.constant(u),
                                   g.constant(Tensor::identity(2)), g.constant(Tensor::zeros({2}))));
  EXPECT_EQ(out, xin.data);
}

TEST(MaskBlock, NoResidualZeroUGivesExactZero) {
  Graph g;
  auto out = g.value(masknet_block(g.constant(random_tensor({2, 3}, 4)), g.constant(random_tensor({2, 3}, 5)),
                                   g.constant(Tensor::zeros({3, 3})), g.constant(random_tensor({3, 3}, 6)),
                                   g.constant(random_tensor({3}, 7))));
  EXPECT_EQ(out, std::vector<double>(6, 0.0));
}

TEST(MaskBlock, ScalarLoopOracle) {
  const std::size_t w = 5;
  auto xin = random_tensor({2, w}, 8), x0 = random_tensor({2, w}, 9), u = random_tensor({w, w}, 10),
       v = random_tensor({w, w}, 11), b = random_tensor({w}, 12);
  Graph g;
  Tensor out = g.tensor(masknet_block(g.constant(xin), g.constant(x0), g.constant(u), g.constant(v), g.constant(b)));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < w; ++i) {
      double mask = 0.0;
      for (std::size_t k = 0; k < w; ++k) {
        double h = b.data[k];
        for (std::size_t j = 0; j < w; ++j) h += x0.data[n * w + j] * v.data[j * w + k];
        mask += std::max(h, 0.0) * u.data[k * w + i];
      }
      EXPECT_NEAR(out.data[n * w + i], mask * xin.data[n * w + i], 1e-12);
    }
}

TEST(MaskBlock, ShapeMismatch) {
  Graph g;
  EXPECT_THROW(masknet_block(g.constant(Tensor::zeros({1, 3})), g.constant(Tensor::zeros({1, 2})),
                             g.constant(Tensor::zeros({2, 2})), g.constant(Tensor::zeros({2, 2})),
                             g.constant(Tensor::zeros({2}))),
               DimensionError);
}

TEST(MaskNet, OneParallelEqualsOneSequential) {
  MaskNetConfig par{6, 5, 1, 0}, seq{6, 5, 0, 1};
  ParamStore s;
  init_masknet_body(s, "masknet", par, 3);
  ParamStore s2;
  init_masknet_body(s2, "masknet", seq, 3);
  ASSERT_EQ(s, s2);
  auto x0 = random_tensor({3, 6}, 4);
  Graph g;
  ParamBinder p(g, s, false);
  Var a = masknet_body(p, "masknet", par, g.constant(x0));
  Var b = masknet_body(p, "masknet", seq, g.constant(x0));
  EXPECT_EQ(g.value(a), g.value(b));
}

TEST(MaskNet, IdenticalParallelBlocksDuplicateOutput) {
  MaskNetConfig two{4, 5, 2, 1}, one{4, 5, 1, 1};
  ParamStore s;
  init_masknet_body(s, "m", two, 8);
  s.set(mask_block_name("m", 1, 0) + "/U", s.at(mask_block_name("m", 0, 0) + "/U"));
  s.set(mask_block_name("m", 1, 0) + "/V", s.at(mask_block_name("m", 0, 0) + "/V"));
  s.set(mask_block_name("m", 1, 0) + "/b", random_tensor({4}, 1));
  s.set(mask_block_name("m", 0, 0) + "/b", s.at(mask_block_name("m", 1, 0) + "/b"));
  auto x0 = random_tensor({2, 4}, 9);
  Graph g;
  ParamBinder p(g, s, false);
  Tensor both = g.tensor(masknet_cross_output(p, "m", two, g.constant(x0)));
  Tensor single = g.tensor(masknet_cross_output(p, "m", one, g.constant(x0)));
  ASSERT_EQ(both.shape, (Shape{2, 8}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(both.data[n * 8 + j], single.data[n * 4 + j]);
      EXPECT_EQ(both.data[n * 8 + 4 + j], single.data[n * 4 + j]);
    }
}

TEST(MaskNet, SequentialChainComposition) {
  MaskNetConfig c{5, 3, 0, 2};
  ParamStore s;
  init_masknet_body(s, "m", c, 4);
  for (const auto& name : s.names())
    if (name.ends_with("/b")) s.set(name, random_tensor(s.at(name).shape, 17));
  auto x0 = random_tensor({2, 5}, 10);
  Graph g;
  ParamBinder p(g, s, false);
  Var x = g.constant(x0);
  Var m1 = masknet_block(x, x, p("m/block0_0/U"), p("m/block0_0/V"), p("m/block0_0/b"));
  Var m2 = masknet_block(m1, x, p("m/block0_1/U"), p("m/block0_1/V"), p("m/block0_1/b"));
  Var want = relu(linear(p, "m/deep", m2));
  EXPECT_EQ(g.value(masknet_body(p, "m", c, x)), g.value(want));
}

TEST(MaskNet, ZeroBlocksIsConfigError) {
  EXPECT_THROW(validate(BackboneConfig(MaskNetConfig{4, 4, 0, 0})), ConfigError);
}

// --- global tokens -------------------------------------------------------------

TEST(Tokenize, Examples) {
  Graph g;
  auto x0 = random_tensor({2, 5}, 1), w = random_tensor({5, 6}, 2), b = random_tensor({6}, 3);
  Var one = tokenize_global(g.constant(x0), g.constant(w), g.constant(b), 1, 6);
  EXPECT_EQ(g.shape(one), (Shape{2, 1, 6}));
  EXPECT_EQ(g.value(one), g.value(project_input(g.constant(x0), g.constant(w), g.constant(b))));
  Var z = tokenize_global(g.constant(x0), g.constant(Tensor::zeros({5, 6})), g.constant(Tensor::zeros({6})), 2, 3);
  EXPECT_EQ(g.value(z), std::vector<double>(12, 0.0));
  Var t = tokenize_global(g.constant(x0), g.constant(w), g.constant(b), 2, 3);
  auto flat = g.value(project_input(g.constant(x0), g.constant(w), g.constant(b)));
  const auto& tv = g.value(t);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(tv[n * 6 + 1 * 3 + k], flat[n * 6 + 3 + k]);
  EXPECT_THROW(tokenize_global(g.constant(x0), g.constant(w), g.constant(b), 2, 4), DimensionError);
}

// --- Transformer ---------------------------------------------------------------

TEST(Transformer, ZeroWeightsPoolEqualsTokenMean) {
  TransformerConfig c{4, 3, 2, 2, 6};
  ParamStore s;
  init_transformer_body(s, "t", c, 1);
  for (auto& [_, t] : s.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
  auto tokens = random_tensor({2, 3, 4}, 5);
  Graph g;
  ParamBinder p(g, s, false);
  Var enc = transformer_encode(p, "t", c, g.constant(tokens));
  EXPECT_EQ(g.value(enc), tokens.data);
  auto pooled = g.value(mean_pool_rows(reshape(enc, {6, 4}), 3));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < 4; ++j) {
      double m = 0.0;
      for (std::size_t t = 0; t < 3; ++t) m += tokens.data[(n * 3 + t) * 4 + j];
      EXPECT_NEAR(pooled[n * 4 + j], m / 3, 1e-15);
    }
}

TEST(Transformer, SingleTokenAttentionIsValueProjection) {
  TransformerConfig c{4, 1, 1, 2, 6};
  ParamStore s;
  init_transformer_body(s, "t", c, 2);
  s.set("t/layer0/attn/Wo/b", random_tensor({4}, 3));
  auto x = random_tensor({3, 4}, 4);
  Graph g;
  ParamBinder p(g, s, false);
  Var att = multi_head_attention(p, "t/layer0/attn", g.constant(x), 1, 2);
  Var want = linear(p, "t/layer0/attn/Wo", matmul(g.constant(x), p("t/layer0/attn/Wv")));
  expect_near_vec(g.value(att), g.value(want), 1e-14);
}

TEST(Transformer, ScalarLoopOracleTwoTokensOneHead) {
  TransformerConfig c{3, 2, 1, 1, 5};
  ParamStore s;
  init_transformer_body(s, "t", c, 6);
  for (const auto& name : s.names())
    if (name.ends_with("/b")) s.set(name, random_tensor(s.at(name).shape, 31));
  auto tokens = random_tensor({1, 2, 3}, 7);
  Graph g;
  ParamBinder p(g, s, false);
  Tensor got = g.tensor(transformer_forward(p, "t", c, g.constant(tokens)));

  auto M = [&](const std::string& n) { return to_mat(s.at(n)); };
  auto B = [&](const std::string& n) { return s.at(n).data; };
  auto ln = [](std::vector<double> v) {
    double m = 0, var = 0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) var += (x - m) * (x - m);
    var /= v.size();
    for (double& x : v) x = (x - m) / std::sqrt(var + 1e-5);
    return v;
  };
  std::vector<std::vector<double>> x{row(tokens, 0), row(tokens, 1)};
  std::vector<std::vector<double>> q(2), k(2), v(2), att(2);
  for (int t = 0; t < 2; ++t) {
    auto h = ln(x[t]);
    q[t] = vec_mat(h, M("t/layer0/attn/Wq"));
    k[t] = vec_mat(h, M("t/layer0/attn/Wk"));
    v[t] = vec_mat(h, M("t/layer0/attn/Wv"));
  }
  for (int t = 0; t < 2; ++t) {
    double sc[2];
    for (int u = 0; u < 2; ++u) {
      sc[u] = 0;
      for (int j = 0; j < 3; ++j) sc[u] += q[t][j] * k[u][j];
      sc[u] /= std::sqrt(3.0);
    }
    const double e0 = std::exp(sc[0]), e1 = std::exp(sc[1]);
    std::vector<double> mix(3);
    for (int j = 0; j < 3; ++j) mix[j] = (e0 * v[0][j] + e1 * v[1][j]) / (e0 + e1);
    auto o = vec_mat(mix, M("t/layer0/attn/Wo/W"));
    for (int j = 0; j < 3; ++j) x[t][j] += o[j] + B("t/layer0/attn/Wo/b")[j];
  }
  for (int t = 0; t < 2; ++t) {
    auto h = vec_mat(ln(x[t]), M("t/layer0/ffn1/W"));
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::max(h[j] + B("t/layer0/ffn1/b")[j], 0.0);
    auto o = vec_mat(h, M("t/layer0/ffn2/W"));
    for (int j = 0; j < 3; ++j) x[t][j] += o[j] + B("t/layer0/ffn2/b")[j];
  }
  std::vector<double> head(6);
  for (int j = 0; j < 3; ++j) {
    head[j] = (x[0][j] + x[1][j]) / 2;
    head[3 + j] = x[0][j];
  }
  auto out = vec_mat(head, M("t/output/W"));
  for (int j = 0; j < 3; ++j) out[j] += B("t/output/b")[j];
  expect_near_vec(got.data, out, 1e-12);
}

TEST(Transformer, HeadDivisibilityIsConfigError) {
  EXPECT_THROW(validate(BackboneConfig(TransformerConfig{5, 2, 1, 2, 4})), ConfigError);
}

// --- RankMixer -----------------------------------------------------------------

TEST(RankMixer, OneHeadMixingIsIdentity) {
  auto perm = token_mixing_permutation(3, 4, 1);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(perm[i], i);
}

TEST(RankMixer, MixingTwiceWithTwoTokensTwoHeadsRestores) {
  auto x = random_tensor({2, 2, 4}, 3);
  Graph g;
  Var once = token_mix(g.constant(x), 2, 4, 2);
  EXPECT_NE(g.value(once), x.data);
  EXPECT_EQ(g.value(token_mix(once, 2, 4, 2)), x.data);
  // Index oracle: new token t, head h comes from token (t + h) mod S.
  auto perm = token_mixing_permutation(2, 4, 2);
  EXPECT_EQ(perm, (std::vector<std::size_t>{0, 1, 6, 7, 4, 5, 2, 3}));
}

TEST(RankMixer, MixingPreservesValueMultiset) {
  auto x = random_tensor({3, 4, 6}, 8);
  Graph g;
  auto mixed = g.value(token_mix(g.constant(x), 4, 6, 2));
  auto a = x.data;
  std::sort(a.begin(), a.end());
  std::sort(mixed.begin(), mixed.end());
  EXPECT_EQ(a, mixed);
}

TEST(RankMixer, ZeroFfnOutputIsInputTokenMean) {
  RankMixerConfig c{4, 2, 2, 6, 2};
  ParamStore s;
  init_rankmixer_body(s, "r", c, 1);
  for (auto& [_, t] : s.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
  auto tokens = random_tensor({3, 2, 4}, 2);
  Graph g;
  ParamBinder p(g, s, false);
  auto out = g.value(rankmixer_forward(p, "r", c, g.constant(tokens)));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(out[n * 4 + j], (tokens.data[(n * 2) * 4 + j] + tokens.data[(n * 2 + 1) * 4 + j]) / 2, 1e-15);
}

TEST(RankMixer, PerTokenFfnIsIndependentPerPosition) {
  RankMixerConfig c{4, 2, 1, 3, 1};
  ParamStore s;
  init_rankmixer_body(s, "r", c, 4);
  auto tokens = random_tensor({2, 2, 4}, 5);
  Graph g;
  ParamBinder p(g, s, false);
  auto out = g.value(rankmixer_forward(p, "r", c, g.constant(tokens)));
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> acc(4, 0.0);
    for (std::size_t t = 0; t < 2; ++t) {
      const std::string pre = "r/layer0/tok" + std::to_string(t);
      auto x = row(tokens, n * 2 + t);
      auto h = vec_mat(x, to_mat(s.at(pre + "/ffn1/W")));
      for (auto& v : h) v = std::max(v, 0.0);
      auto o = vec_mat(h, to_mat(s.at(pre + "/ffn2/W")));
      for (std::size_t j = 0; j < 4; ++j) acc[j] += (x[j] + o[j]) / 2;
    }
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out[n * 4 + j], acc[j], 1e-12);
  }
}

TEST(RankMixer, DivisibilityIsConfigError) {
  EXPECT_THROW(validate(BackboneConfig(RankMixerConfig{6, 3, 1, 4, 2})), ConfigError);
  EXPECT_THROW(validate(BackboneConfig(RankMixerConfig{5, 2, 1, 4, 2})), ConfigError);
}

// --- DHEN and dispatch -----------------------------------------------------------

TEST(Dhen, SingleMemberEqualsThatBackbone) {
  BackboneConfig solo = MaskNetConfig{6, 5, 2, 1};
  BackboneConfig ens = DhenConfig{{solo}};
  ParamStore a, b;
  init_backbone(a, solo, 7, 3);
  init_backbone(b, ens, 7, 3);
  // Same tensors under the ensemble's names.
  for (const auto& name : a.names()) {
    const std::string rest = name.substr(std::string("masknet").size());
    const std::string mapped = rest.starts_with("/input") ? "dhen" + rest : "dhen/m0/masknet" + rest;
    ASSERT_TRUE(b.contains(mapped)) << mapped;
    b.set(mapped, a.at(name));
  }
  EXPECT_EQ(a.size(), b.size());
  auto x0 = random_tensor({3, 7}, 9);
  EXPECT_EQ(forward(solo, a, x0).data, forward(ens, b, x0).data);
}

TEST(Dhen, WidthIsAdditiveAndMatchesSubForwards) {
  BackboneConfig dcn = DcnV2Config{6, 4, 2, 1, 3};
  BackboneConfig mask = MaskNetConfig{5, 3, 1, 2};
  BackboneConfig ens = DhenConfig{{dcn, mask}};
  EXPECT_EQ(hidden_width(ens), hidden_width(dcn) + hidden_width(mask));
  ParamStore s;
  init_backbone(s, ens, 9, 11);
  auto x0 = random_tensor({2, 9}, 12);
  Tensor got = forward(ens, s, x0);
  ASSERT_EQ(got.shape, (Shape{2, hidden_width(ens)}));
  Graph g;
  ParamBinder p(g, s, false);
  Var proj = project_input(g.constant(x0), p("dhen/input/W"), p("dhen/input/b"));
  Var a = dcnv2_body(p, "dhen/m0/dcnv2", std::get<DcnV2Config>(dcn.body), slice_cols(proj, 0, 6));
  Var b = masknet_body(p, "dhen/m1/masknet", std::get<MaskNetConfig>(mask.body), slice_cols(proj, 6, 5));
  EXPECT_EQ(got.data, g.value(concat_cols({a, b})));
}

TEST(Dhen, EmptyOrNestedIsConfigError) {
  EXPECT_THROW(validate(BackboneConfig(DhenConfig{})), ConfigError);
  BackboneConfig inner = DhenConfig{{MaskNetConfig{}}};
  EXPECT_THROW(validate(BackboneConfig(DhenConfig{{inner}})), ConfigError);
}

TEST(Backbone, ParameterNamesAreFamilyScoped) {
  for (const auto& [family, cfg] : cvr::testing::tiny_backbones()) {
    ParamStore s;
    init_backbone(s, cfg, 8, 1);
    for (const auto& n : s.names()) EXPECT_TRUE(n.starts_with(family + "/")) << n;
    EXPECT_TRUE(s.contains(family + "/input/W"));
    // Only the input projection depends on D.
    ParamStore wide;
    init_backbone(wide, cfg, 13, 1);
    for (const auto& n : s.names()) {
      if (n.starts_with(family + "/input/")) continue;
      EXPECT_EQ(s.at(n).data, wide.at(n).data) << n;
    }
  }
}

TEST(Backbone, ForwardIsDeterministicWithDeclaredWidth) {
  for (const auto& [family, cfg] : cvr::testing::tiny_backbones()) {
    ParamStore s;
    init_backbone(s, cfg, 8, 5);
    auto x0 = random_tensor({3, 8}, 6);
    Tensor a = forward(cfg, s, x0), b = forward(cfg, s, x0);
    EXPECT_EQ(a.data, b.data) << family;
    EXPECT_EQ(a.shape, (Shape{3, hidden_width(cfg)})) << family;
    // Rows are scored independently of batch composition.
    Tensor first = forward(cfg, s, Tensor({1, 8}, std::vector<double>(x0.data.begin(), x0.data.begin() + 8)));
    for (std::size_t j = 0; j < first.numel(); ++j) EXPECT_EQ(first.data[j], a.data[j]) << family;
  }
}

TEST(Backbone, GradientCheckEveryFamily) {
  for (const auto& [family, cfg] : cvr::testing::tiny_backbones()) {
    ParamStore s;
    init_backbone(s, cfg, cvr::testing::kTinyInputWidth, 21);
    for (const auto& n : s.names())
      if (n.ends_with("/b")) s.set(n, random_tensor(s.at(n).shape, 40, -0.1, 0.1));
    s.set("x0", random_tensor({cvr::testing::kTinyBatch, cvr::testing::kTinyInputWidth}, 22));
    auto r = cvr::testing::grad_check(s, [&cfg = cfg](Graph&, ParamBinder& p) {
      return cvr::testing::weighted_sum(backbone_forward(p, cfg, p("x0")));
    });
    EXPECT_LT(r.max_rel_err, 1e-4) << family << " worst " << r.worst;
  }
}

TEST(Backbone, ConfigJsonRoundTripAndFactors) {
  for (const auto& [family, cfg] : cvr::testing::tiny_backbones()) {
    EXPECT_EQ(backbone_from_json(to_json(cfg)), cfg) << family;
    for (const auto& f : scaling_factors(cfg)) {
      try {
        auto bumped = with_factor(cfg, f, 4);
        EXPECT_EQ(to_json(bumped)[f], 4) << family << " " << f;
      } catch (const ConfigError&) {
        // 4 violates a divisibility or rank rule for this factor
      }
    }
  }
  EXPECT_THROW(with_factor(BackboneConfig(MaskNetConfig{}), "d_model", 8), ConfigError);
  EXPECT_THROW(backbone_from_json(nlohmann::json{{"family", "wukong"}}), ConfigError);
}

// --- FLOPs ---------------------------------------------------------------------------

TEST(Flops, LinearExample) { EXPECT_EQ(linear_flops(4, 3, 2), 48u); }

TEST(Flops, LinearInBatch) {
  for (const auto& [family, cfg] : cvr::testing::tiny_backbones())
    EXPECT_EQ(count_flops(cfg, 30, 2), 2 * count_flops(cfg, 30, 1)) << family;
}

TEST(Flops, MonotoneInEveryScalingFactor) {
  std::vector<BackboneConfig> bases{DcnV2Config{}, MaskNetConfig{}, TransformerConfig{8, 4, 1, 2, 16},
                                    RankMixerConfig{8, 4, 1, 16, 2}};
  for (const auto& base : bases) {
    for (const auto& f : scaling_factors(base)) {
      std::uint64_t prev = 0;
      bool strict = false;
      for (std::size_t v : {1, 2, 4, 8, 16, 32, 64, 128}) {
        BackboneConfig c;
        try {
          c = with_factor(base, f, v);
        } catch (const ConfigError&) {
          continue;  // e.g. low_rank above width or indivisible heads
        }
        const auto fl = count_flops(c, 40);
        EXPECT_GE(fl, prev) << base.family() << " " << f << "=" << v;
        strict = strict || (prev != 0 && fl > prev);
        prev = fl;
      }
      // Mixing is a free permutation, so RankMixer heads leave the count flat.
      const bool flat_ok = f == "sequential_blocks" || (base.family() == "rankmixer" && f == "n_heads");
      EXPECT_TRUE(strict || flat_ok) << base.family() << " " << f;
    }
  }
}

TEST(Flops, DcnCrossWidthDoublingIncreases) {
  DcnV2Config a{}, b{};
  b.cross_width *= 2;
  EXPECT_GT(count_flops(b, 40), count_flops(a, 40));
}

TEST(Flops, TransformerSeqLenCostsMoreThanHeads) {
  BackboneConfig base = TransformerConfig{16, 4, 1, 2, 32};
  const auto f0 = count_flops(base, 40);
  const auto seq = count_flops(with_factor(base, "seq_len", 8), 40) - f0;
  const auto heads = count_flops(with_factor(base, "n_heads", 4), 40) - f0;
  EXPECT_GT(seq, heads);
}
