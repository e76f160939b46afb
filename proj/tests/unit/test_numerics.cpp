#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "../support/gradcheck.hpp"
#include "cvr/errors.hpp"
#include "cvr/hash.hpp"
#include "cvr/numerics/graph.hpp"
#include "cvr/numerics/kernels.hpp"
#include "cvr/numerics/optim.hpp"
#include "cvr/numerics/params.hpp"
#include "cvr/numerics/rng.hpp"

using namespace cvr;
using cvr::testing::grad_check;
using cvr::testing::random_tensor;
using cvr::testing::weighted_sum;

namespace {

std::vector<double> values(Graph& g, Var v) { return g.value(v); }

}  // namespace

// --- hashing and RNG ---------------------------------------------------------

TEST(Hash, FnvGoldensFromReferenceImplementation) {
  // Frozen from an independent FNV-1a implementation.
  EXPECT_EQ(fnv1a_u64(0), 0xa8c7f832281a39c5ULL);
  EXPECT_EQ(fnv1a_u64(0) % 97, 89u);
  EXPECT_EQ(fnv1a_u64(123456789) % 1000, 785u);
  EXPECT_EQ(fnv1a("abc"), 0xe71fa2190541574bULL);
  EXPECT_EQ(fnv1a(""), kFnvOffset);
  EXPECT_EQ(hex64(0xa8c7f832281a39c5ULL), "a8c7f832281a39c5");
}

TEST(Rng, SplitMixGoldens) {
  SplitMix64 zero(0);
  EXPECT_EQ(zero.next_u64(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(zero.next_u64(), 0x6e789e6aa1b965f4ULL);
  SplitMix64 r(42);
  EXPECT_EQ(r.next_u64(), 0xbdd732262feb6e95ULL);
  EXPECT_EQ(r.next_u64(), 0x28efe333b266f103ULL);
  EXPECT_EQ(r.next_u64(), 0x47526757130f9f52ULL);
}

TEST(Rng, DerivedStreamsAreIndependentAndStable) {
  SplitMix64 base(7);
  auto a1 = base.derive("alpha"), a2 = base.derive("alpha"), b = base.derive("beta");
  EXPECT_EQ(a1.next_u64(), a2.next_u64());
  EXPECT_NE(base.derive("alpha").next_u64(), b.next_u64());
  EXPECT_EQ(base.counter(), 0u);  // deriving does not consume draws
}

TEST(Rng, RangesHold) {
  SplitMix64 r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double o = r.uniform_open();
    ASSERT_GT(o, 0.0);
    ASSERT_LT(o, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
}

TEST(Rng, ShuffleIsPermutation) {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  SplitMix64 r(5);
  r.shuffle(v.begin(), v.end());
  auto s = v;
  std::sort(s.begin(), s.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(s[i], i);
}

// --- kernels -----------------------------------------------------------------

TEST(Kernels, GemmMatchesNaiveAndIsRowIndependent) {
  const std::size_t m = 13, k = 37, n = 19;
  auto a = random_tensor({m, k}, 1), b = random_tensor({k, n}, 2);
  std::vector<double> c(m * n, 0.0);
  kernels::gemm_nn(a.data.data(), b.data.data(), c.data(), m, k, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.data[i * k + p] * b.data[p * n + j];
      ASSERT_NEAR(c[i * n + j], s, 1e-12);
    }
  // Each row's result is bit-identical when computed alone.
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> row(n, 0.0);
    kernels::gemm_nn(a.data.data() + i * k, b.data.data(), row.data(), 1, k, n);
    for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(row[j], c[i * n + j]);
  }
}

TEST(Kernels, TransposedVariantsMatchNaive) {
  const std::size_t m = 5, k = 7, n = 3;
  auto a = random_tensor({m, k}, 3), bt = random_tensor({n, k}, 4), at = random_tensor({k, m}, 5),
       b = random_tensor({k, n}, 6);
  std::vector<double> c1(m * n, 0.0), c2(m * n, 0.0);
  kernels::gemm_nt(a.data.data(), bt.data.data(), c1.data(), m, k, n);
  kernels::gemm_tn(at.data.data(), b.data.data(), c2.data(), k, m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        s1 += a.data[i * k + p] * bt.data[j * k + p];
        s2 += at.data[p * m + i] * b.data[p * n + j];
      }
      EXPECT_NEAR(c1[i * n + j], s1, 1e-12);
      EXPECT_NEAR(c2[i * n + j], s2, 1e-12);
    }
}

// --- forward examples --------------------------------------------------------

TEST(Matmul, Examples) {
  Graph g;
  Var id = g.constant(Tensor::identity(2));
  Var m = g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(values(g, matmul(id, m)), (std::vector<double>{1, 2, 3, 4}));
  Var r = g.constant(Tensor::matrix(1, 2, {1, 2}));
  Var z = g.constant(Tensor::matrix(2, 1, {0, 0}));
  EXPECT_EQ(values(g, matmul(r, z)), (std::vector<double>{0}));
  Var c = g.constant(Tensor::matrix(2, 1, {5, 6}));
  EXPECT_EQ(values(g, matmul(m, c)), (std::vector<double>{17, 39}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph g;
  Var a = g.constant(Tensor::zeros({2, 3}));
  Var b = g.constant(Tensor::zeros({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, Examples) {
  Graph g;
  Var x = g.constant(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(values(g, relu(x)), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(values(g, log1p(g.constant(Tensor({1}, {0})))), (std::vector<double>{0}));
  EXPECT_NEAR(values(g, log1p(g.constant(Tensor({1}, {std::numbers::e - 1.0}))))[0], 1.0, 1e-15);
  const Var in[] = {x, x};
  EXPECT_EQ(values(g, elementwise(ElementwiseOp::kAdd, in)), (std::vector<double>{-2, 0, 4}));
  EXPECT_EQ(values(g, elementwise(ElementwiseOp::kMul, in)), (std::vector<double>{1, 0, 4}));
  // scalar broadcast
  EXPECT_EQ(values(g, add(x, g.constant(Tensor::scalar(1)))), (std::vector<double>{0, 1, 3}));
}

TEST(Elementwise, IncompatibleShapesThrow) {
  Graph g;
  Var a = g.constant(Tensor::zeros({2, 3}));
  Var b = g.constant(Tensor::zeros({3, 2}));
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(mul(a, g.constant(Tensor::zeros({2}))), DimensionError);
}

TEST(Elementwise, ReluSubgradientAtZeroIsZero) {
  Graph g;
  Var x = g.param(Tensor({3}, {-1, 0, 2}));
  g.backward(sum(relu(x)));
  EXPECT_EQ(g.grad(x), (std::vector<double>{0, 0, 1}));
}

TEST(Softmax, Examples) {
  Graph g;
  EXPECT_EQ(values(g, softmax_rows(g.constant(Tensor::matrix(1, 2, {0, 0})))), (std::vector<double>{0.5, 0.5}));
  for (double c : {-300.0, 0.0, 7.5, 1e6}) EXPECT_EQ(values(g, softmax_rows(g.constant(Tensor::matrix(1, 1, {c}))))[0], 1.0);
  auto v = values(g, softmax_rows(g.constant(Tensor::matrix(1, 2, {0, std::log(3.0)}))));
  EXPECT_NEAR(v[0], 0.25, 1e-15);
  EXPECT_NEAR(v[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneAndArePermutationEquivariant) {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    auto x = random_tensor({1, n}, 100 + trial, -30, 30);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Tensor px = x;
    for (std::size_t i = 0; i < n; ++i) px.data[i] = x.data[perm[i]];
    Graph g;
    auto y = values(g, softmax_rows(g.constant(x)));
    auto py = values(g, softmax_rows(g.constant(px)));
    double s = 0.0;
    for (double v : y) s += v;
    ASSERT_NEAR(s, 1.0, 1e-12);
    for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(py[i], y[perm[i]], 1e-15);
  }
}

TEST(Softmax, NanInputIsNumericError) {
  Graph g;
  EXPECT_THROW(softmax_rows(g.constant(Tensor::matrix(1, 2, {0, std::nan("")}))), NumericError);
}

// --- backward ----------------------------------------------------------------

TEST(Backward, Examples) {
  {
    Graph g;
    Var x = g.param(Tensor({3}, {1, 2, 3}));
    g.backward(sum(x));
    EXPECT_EQ(g.grad(x), (std::vector<double>{1, 1, 1}));
  }
  {
    Graph g;
    Var x = g.param(Tensor({2}, {1, 2}));
    g.backward(sum(mul(x, x)));
    EXPECT_EQ(g.grad(x), (std::vector<double>{2, 4}));
  }
  {
    Graph g;
    Var x = g.param(Tensor({2}, {1, 2}));
    g.backward(sum(add(x, x)));  // fan-out accumulates
    EXPECT_EQ(g.grad(x), (std::vector<double>{2, 2}));
  }
}

TEST(Backward, NonScalarLossIsContractError) {
  Graph g;
  Var x = g.param(Tensor({2}, {1, 2}));
  EXPECT_THROW(g.backward(x), ContractError);
}

TEST(Backward, RepeatedEvaluationIsBitIdentical) {
  auto run = [] {
    Graph g;
    Var a = g.param(random_tensor({6, 5}, 1));
    Var b = g.param(random_tensor({5, 4}, 2));
    Var y = softmax_rows(relu(matmul(a, b)));
    Var l = weighted_sum(add(y, y));
    g.backward(l);
    return std::make_pair(g.grad(a), g.grad(b));
  };
  EXPECT_EQ(run(), run());
}

// --- gradient checks per op ----------------------------------------------------

namespace {

ParamStore store_of(std::initializer_list<std::pair<const char*, Tensor>> items) {
  ParamStore s;
  for (const auto& [n, t] : items) s.set(n, t);
  return s;
}

void expect_grad_ok(const ParamStore& s, const cvr::testing::LossBuilder& f) {
  const auto r = grad_check(s, f);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_err, 1e-4) << "worst " << r.worst;
}

}  // namespace

TEST(GradCheck, LinearAlgebra) {
  auto s = store_of({{"a", random_tensor({3, 4}, 1)}, {"b", random_tensor({4, 2}, 2)}});
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(matmul(p("a"), p("b"))); });
  auto s3 = store_of({{"a", random_tensor({2, 3, 4}, 3)}, {"b", random_tensor({2, 4, 5}, 4)},
                      {"bt", random_tensor({2, 5, 4}, 5)}});
  expect_grad_ok(s3, [](Graph&, ParamBinder& p) { return weighted_sum(bmm(p("a"), p("b"))); });
  expect_grad_ok(s3, [](Graph&, ParamBinder& p) { return weighted_sum(bmm(p("a"), p("bt"), true)); });
}

TEST(GradCheck, Elementwise) {
  auto s = store_of({{"a", random_tensor({3, 4}, 7)}, {"b", random_tensor({3, 4}, 8)},
                     {"pos", random_tensor({3, 4}, 9, 0.1, 2.0)}, {"k", Tensor::scalar(0.7)}});
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(add(p("a"), p("b"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(sub(p("a"), p("b"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(mul(p("a"), p("b"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(mul(p("a"), p("k"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(add(p("k"), p("b"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(scale(p("a"), -2.5)); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(relu(p("a"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(log1p(p("pos"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(exp(p("a"))); });
}

TEST(GradCheck, Broadcasts) {
  auto s = store_of({{"x", random_tensor({4, 3}, 10)}, {"b", random_tensor({3}, 11)}, {"c", random_tensor({4, 1}, 12)}});
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(add_bias(p("x"), p("b"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(mul_col(p("x"), p("c"))); });
}

TEST(GradCheck, Normalizations) {
  auto s = store_of({{"x", random_tensor({4, 5}, 13, -3, 3)}, {"x3", random_tensor({2, 3, 3}, 14, -3, 3)}});
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(softmax_rows(p("x"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(softmax_rows(p("x3"))); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(layer_norm_rows(p("x"))); });
}

TEST(GradCheck, ReductionsAndLayout) {
  auto s = store_of({{"x", random_tensor({6, 4}, 15)}, {"y", random_tensor({6, 2}, 16)}, {"z", random_tensor({3, 4}, 17)}});
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return mean(p("x")); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(mean_pool_rows(p("x"), 3)); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(reshape(p("x"), {2, 12})); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(concat_cols({p("x"), p("y")})); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(slice_cols(p("x"), 1, 2)); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) {
    const Var parts[] = {p("x"), p("z")};
    return weighted_sum(concat_rows(parts));
  });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(gather_rows(p("x"), {5, 0, 0, 3})); });
  expect_grad_ok(s, [](Graph&, ParamBinder& p) {
    return weighted_sum(permute_within_blocks(p("x"), {3, 1, 7, 0, 2, 6, 4, 5}));
  });
}

TEST(GradCheck, EmbeddingBag) {
  auto s = store_of({{"t", random_tensor({5, 3}, 18)}});
  expect_grad_ok(s, [](Graph&, ParamBinder& p) { return weighted_sum(embedding_bag(p("t"), {{0, 2, 2}, {}, {4}})); });
}

TEST(Layout, EmbeddingBagEmptyIsZeroAndMeanIsExact) {
  Graph g;
  Var t = g.constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  auto v = values(g, embedding_bag(t, {{}, {0, 2}}));
  EXPECT_EQ(v, (std::vector<double>{0, 0, 3, 4}));
  EXPECT_THROW(embedding_bag(t, {{3}}), DimensionError);
}

TEST(Layout, LayerNormStandardizesRows) {
  Graph g;
  auto v = values(g, layer_norm_rows(g.constant(Tensor::matrix(1, 4, {1, 2, 3, 4}))));
  double m = 0.0, sq = 0.0;
  for (double x : v) m += x;
  m /= 4;
  for (double x : v) sq += (x - m) * (x - m);
  EXPECT_NEAR(m, 0.0, 1e-12);
  EXPECT_NEAR(sq / 4, 1.25 / (1.25 + 1e-5), 1e-12);
}

// --- optimizer and schedule ----------------------------------------------------

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Tensor p = random_tensor({3, 3}, 20);
  const Tensor before = p;
  std::vector<double> g(9, 0.0);
  std::vector<Tensor*> ps{&p};
  std::vector<const std::vector<double>*> gs{&g};
  AdamState st;
  adam_step(ps, gs, st, 0.1);
  EXPECT_EQ(p.data, before.data);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double grad : {0.3, -2.0, 1e-3}) {
    Tensor p = Tensor::scalar(1.0);
    std::vector<double> g{grad};
    std::vector<Tensor*> ps{&p};
    std::vector<const std::vector<double>*> gs{&g};
    AdamState st;
    st.config.eps = 1e-300;
    adam_step(ps, gs, st, 0.01);
    EXPECT_NEAR(p.data[0], 1.0 - 0.01 * (grad > 0 ? 1 : -1), 1e-15);
  }
}

TEST(Adam, DeterministicAndStepIncreases) {
  auto run = [] {
    Tensor p = random_tensor({4}, 21);
    AdamState st;
    for (int i = 0; i < 5; ++i) {
      std::vector<double> g = random_tensor({4}, 30 + i).data;
      std::vector<Tensor*> ps{&p};
      std::vector<const std::vector<double>*> gs{&g};
      const auto before = st.step;
      adam_step(ps, gs, st, 0.05);
      EXPECT_EQ(st.step, before + 1);
    }
    return p.data;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatchAndNegativeLrAreContractErrors) {
  Tensor p = Tensor::zeros({3});
  std::vector<double> g(2, 0.0);
  std::vector<Tensor*> ps{&p};
  std::vector<const std::vector<double>*> gs{&g};
  AdamState st;
  EXPECT_THROW(adam_step(ps, gs, st, 0.1), ContractError);
  std::vector<double> ok(3, 0.0);
  std::vector<const std::vector<double>*> gs2{&ok};
  EXPECT_THROW(adam_step(ps, gs2, st, -1.0), ContractError);
}

TEST(LrSchedule, Examples) {
  LrSchedule s{10, 110, 1.0, 0.2};
  EXPECT_EQ(lr_at(s, 0), 0.0);
  EXPECT_EQ(lr_at(s, 10), 1.0);
  EXPECT_NEAR(lr_at(s, 110), 0.2, 1e-15);
  EXPECT_NEAR(lr_at(s, 60), 0.6, 1e-15);
  EXPECT_THROW(lr_at(s, 111), ContractError);
  EXPECT_THROW(lr_at(LrSchedule{5, 4, 1.0, 0.0}, 0), ContractError);
}

TEST(LrSchedule, ContinuousAtWarmupEndAndNonNegative) {
  LrSchedule s{1000, 5000, 3e-3, 1e-5};
  EXPECT_NEAR(lr_at(s, 999), lr_at(s, 1000), 3e-3 / 1000 + 1e-12);
  EXPECT_NEAR(lr_at(s, 1001), lr_at(s, 1000), 1e-9);
  for (std::uint64_t t = 0; t <= 5000; t += 7) EXPECT_GE(lr_at(s, t), 0.0);
}

// --- params ------------------------------------------------------------------

TEST(Params, InitDependsOnlyOnNameAndSeed) {
  ParamStore a, b;
  add_linear(a, "x/l0", 4, 3, 9);
  add_linear(b, "y/other", 2, 2, 9);
  add_linear(b, "x/l0", 4, 3, 9);
  EXPECT_EQ(a.at("x/l0/W").data, b.at("x/l0/W").data);
  ParamStore c;
  add_linear(c, "x/l0", 4, 3, 10);
  EXPECT_NE(a.at("x/l0/W").data, c.at("x/l0/W").data);
  EXPECT_THROW(a.at("missing"), ContractError);
}
