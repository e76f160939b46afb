#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "../support/gradcheck.hpp"
#include "cvr/errors.hpp"
#include "cvr/features/encode.hpp"
#include "cvr/features/record.hpp"
#include "cvr/features/schema.hpp"

using namespace cvr;

namespace {

// Independent FNV-1a over big-endian key bytes, for cross-checking.
std::uint64_t ref_fnv_key(std::uint64_t key) {
  std::uint64_t h = 14695981039346656037ULL;
  for (int shift = 56; shift >= 0; shift -= 8) {
    h ^= (key >> shift) & 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t ref_fnv_str(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

const char* kTinySchema = R"(# tiny
price numerical
brand categorical vocab_size=11 embed_dim=3
title text ngram_n=2 vocab_size=17 embed_dim=2
history sequential max_len=3 vocab_size=13 embed_dim=4
)";

}  // namespace

// --- schema ------------------------------------------------------------------

TEST(Schema, ParseSerializeRoundTrip) {
  auto s = FeatureSchema::parse(kTinySchema);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[1].kind, FeatureKind::kCategorical);
  EXPECT_EQ(s[2].ngram_n, 2u);
  EXPECT_EQ(s[3].max_len, 3u);
  auto again = FeatureSchema::parse(s.serialize());
  EXPECT_EQ(again, s);
  EXPECT_EQ(again.fingerprint(), s.fingerprint());
  EXPECT_EQ(s.input_width(), 2u + 3 + 2 + 4);
  EXPECT_EQ(s.offset_of(2), 5u);
}

TEST(Schema, FingerprintChangesIffSpecChanges) {
  auto s = FeatureSchema::parse(kTinySchema);
  auto same = FeatureSchema::parse(std::string(kTinySchema) + "\n# trailing comment\n");
  EXPECT_EQ(s.fingerprint(), same.fingerprint());
  std::set<std::uint64_t> seen{s.fingerprint()};
  auto specs = s.specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto mutated = specs;
    mutated[i].embed_dim += 1;
    if (mutated[i].kind == FeatureKind::kNumerical) mutated[i].name += "x";
    EXPECT_TRUE(seen.insert(FeatureSchema(mutated).fingerprint()).second);
  }
  auto swapped = specs;
  std::swap(swapped[0], swapped[1]);
  EXPECT_TRUE(seen.insert(FeatureSchema(swapped).fingerprint()).second);
  EXPECT_EQ(s.fingerprint(), ref_fnv_str(s.serialize()));
}

TEST(Schema, Invalid) {
  EXPECT_THROW(FeatureSchema::parse("a numerical\na numerical\n"), SchemaError);
  EXPECT_THROW(FeatureSchema::parse("a categorical vocab_size=0 embed_dim=2\n"), SchemaError);
  EXPECT_THROW(FeatureSchema::parse("a categorical vocab_size=3 embed_dim=0\n"), SchemaError);
  EXPECT_THROW(FeatureSchema::parse("a bogus\n"), SchemaError);
  EXPECT_THROW(FeatureSchema::parse("a text ngram_n=x\n"), SchemaError);
  EXPECT_THROW(FeatureSchema::parse("a/b numerical\n"), SchemaError);
  auto s = FeatureSchema::parse(kTinySchema);
  EXPECT_THROW(s.index_of("nope"), SchemaError);
  EXPECT_THROW(make_record(s, {{"nope", 1.0}}), SchemaError);
}

// --- hashing -----------------------------------------------------------------

TEST(HashIndex, Examples) {
  for (std::uint64_t k : {0ULL, 1ULL, 99ULL, ~0ULL}) EXPECT_EQ(hash_index(k, 1), 0u);
  EXPECT_EQ(hash_index(12345, 1000), hash_index(12345, 1000));
  EXPECT_EQ(hash_index(0, 97), 89u);  // frozen from an independent FNV-1a
  for (std::uint64_t k = 0; k < 500; ++k) ASSERT_EQ(hash_index(k * 7919, 101), ref_fnv_key(k * 7919) % 101);
}

TEST(HashIndex, CollisionRateNonIncreasingInVocab) {
  SplitMix64 rng(4);
  std::vector<std::uint64_t> keys(2000);
  for (auto& k : keys) k = rng.next_u64();
  auto collision_rate = [&](std::uint64_t v) {
    std::set<std::uint64_t> used;
    for (auto k : keys) used.insert(hash_index(k, v));
    return 1.0 - static_cast<double>(used.size()) / static_cast<double>(keys.size());
  };
  double prev = 1.0;
  for (std::uint64_t v = 500; v <= 64000; v *= 2) {
    const double r = collision_rate(v);
    EXPECT_LE(r, prev) << "vocab " << v;
    prev = r;
  }
}

// --- numerical -----------------------------------------------------------------

TEST(Numerical, Examples) {
  EXPECT_EQ(encode_numerical(5.0, {5.0, 2.0})[0], 0.0);
  EXPECT_EQ(encode_numerical(0.0, {1.0, 2.0})[1], 0.0);
  auto e = encode_numerical(3.0, {1.0, 2.0});
  EXPECT_EQ(e[0], 1.0);
  EXPECT_EQ(e[1], std::log(4.0));
  auto m = encode_numerical(FeatureValue{Missing{}}, {1.0, 2.0});
  EXPECT_EQ(m[0], 0.0);
  EXPECT_EQ(m[1], 0.0);
  EXPECT_EQ(encode_numerical(-3.0, {0.0, 1.0})[1], 0.0);  // log1p clamps negatives
}

TEST(Numerical, StatsArePopulationMomentsWithFlooredStd) {
  auto s = FeatureSchema::parse("x numerical\ny numerical\nz numerical\n");
  std::vector<FeatureRecord> rs{make_record(s, {{"x", 1.0}, {"y", 4.0}}), make_record(s, {{"x", 3.0}, {"y", 4.0}}),
                                make_record(s, {{"x", 5.0}})};
  auto st = compute_norm_stats(s, rs);
  EXPECT_EQ(st.at("x").mean, 3.0);
  EXPECT_NEAR(st.at("x").std, std::sqrt(8.0 / 3.0), 1e-15);
  EXPECT_EQ(st.at("y").mean, 4.0);
  EXPECT_EQ(st.at("y").std, kMinStd);
  EXPECT_EQ(st.at("z"), (Moments{0.0, 1.0}));
}

// --- text ----------------------------------------------------------------------

TEST(Text, NgramsOverCodePoints) {
  EXPECT_EQ(char_ngrams("abcd", 2), (std::vector<std::string>{"ab", "bc", "cd"}));
  EXPECT_EQ(char_ngrams("ab", 2), (std::vector<std::string>{"ab"}));
  EXPECT_EQ(char_ngrams("a", 3), (std::vector<std::string>{"a"}));
  EXPECT_TRUE(char_ngrams("", 3).empty());
  // "é" is two bytes but one code point.
  EXPECT_EQ(char_ngrams("\xC3\xA9t\xC3\xA9", 2), (std::vector<std::string>{"\xC3\xA9t", "t\xC3\xA9"}));
}

TEST(Text, EncodeExamples) {
  const Tensor table = cvr::testing::random_tensor({17, 2}, 3);
  // "ab", n=2: exactly the row of gram "ab"
  const auto row = ref_fnv_str("ab") % 17;
  auto v = encode_text("ab", 2, table);
  EXPECT_EQ(v, (std::vector<double>{table.data[row * 2], table.data[row * 2 + 1]}));
  EXPECT_EQ(encode_text("", 2, table), (std::vector<double>{0, 0}));
  // "abc", n=2 over a table whose rows are their own index: mean of the two gram rows.
  Tensor idx = Tensor::zeros({17, 2});
  for (std::size_t r = 0; r < 17; ++r) idx.data[r * 2] = idx.data[r * 2 + 1] = static_cast<double>(r);
  const double expect = (static_cast<double>(ref_fnv_str("ab") % 17) + static_cast<double>(ref_fnv_str("bc") % 17)) / 2;
  auto m = encode_text("abc", 2, idx);
  EXPECT_EQ(m[0], expect);
  EXPECT_EQ(m[1], expect);
}

// --- sequential ----------------------------------------------------------------

TEST(Sequential, EncodeExamples) {
  Tensor idx = Tensor::zeros({13, 1});
  for (std::size_t r = 0; r < 13; ++r) idx.data[r] = static_cast<double>(r);
  std::vector<std::uint64_t> none;
  EXPECT_EQ(encode_sequential(none, idx, 4), (std::vector<double>{0}));
  std::vector<std::uint64_t> same{42, 42, 42};
  EXPECT_EQ(encode_sequential(same, idx, 4)[0], static_cast<double>(ref_fnv_key(42) % 13));
  std::vector<std::uint64_t> two{5, 6};
  EXPECT_EQ(encode_sequential(two, idx, 4)[0],
            (static_cast<double>(ref_fnv_key(5) % 13) + static_cast<double>(ref_fnv_key(6) % 13)) / 2);
}

TEST(Sequential, TruncationKeepsMostRecent) {
  Tensor idx = Tensor::zeros({13, 1});
  for (std::size_t r = 0; r < 13; ++r) idx.data[r] = static_cast<double>(r);
  std::vector<std::uint64_t> keys{1, 2, 3, 4, 5};
  std::vector<std::uint64_t> tail{4, 5};
  EXPECT_EQ(encode_sequential(keys, idx, 2), encode_sequential(tail, idx, 2));
  FeatureSpec spec{"h", FeatureKind::kSequential, 13, 1, 3, 2};
  EXPECT_EQ(sequence_bag(keys, spec).size(), 2u);
}

// --- x0 assembly ---------------------------------------------------------------

TEST(Assemble, WidthRules) {
  auto one = FeatureSchema::parse("p numerical\n");
  EXPECT_EQ(one.input_width(), 2u);
  auto two = FeatureSchema::parse("p numerical\nc categorical vocab_size=5 embed_dim=8\n");
  EXPECT_EQ(two.input_width(), 10u);
  auto x0 = assemble_x0(make_record(two, {{"p", 1.0}, {"c", std::uint64_t{3}}}), two, init_tables(two, 1),
                        compute_norm_stats(two, std::vector<FeatureRecord>{}));
  EXPECT_EQ(x0.shape, (Shape{1, 10}));
}

TEST(Assemble, ComponentwiseOracle) {
  auto s = FeatureSchema::parse(kTinySchema);
  auto tables = init_tables(s, 77);
  NormStats stats;
  stats.features["price"] = {2.0, 4.0};
  auto rec = make_record(s, {{"price", 10.0},
                             {"brand", std::uint64_t{123}},
                             {"title", std::string("shoe")},
                             {"history", std::vector<std::uint64_t>{9, 8, 7, 6}}});
  auto x0 = assemble_x0(rec, s, tables, stats);
  ASSERT_EQ(x0.numel(), 11u);
  std::vector<double> expect{2.0, std::log1p(10.0)};
  const auto& brand = tables.at("brand");
  const auto br = ref_fnv_key(123) % 11;
  for (int j = 0; j < 3; ++j) expect.push_back(brand.data[br * 3 + j]);
  const auto& title = tables.at("title");
  for (int j = 0; j < 2; ++j) {
    double acc = 0.0;
    for (const char* g : {"sh", "ho", "oe"}) acc += title.data[(ref_fnv_str(g) % 17) * 2 + j];
    expect.push_back(acc * (1.0 / 3.0));
  }
  const auto& hist = tables.at("history");
  for (int j = 0; j < 4; ++j) {
    double acc = 0.0;
    for (std::uint64_t k : {8, 7, 6}) acc += hist.data[(ref_fnv_key(k) % 13) * 4 + j];
    expect.push_back(acc * (1.0 / 3.0));
  }
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(x0.data[i], expect[i]) << i;
}

TEST(Assemble, MissingUsesUnseenRowAndZerosAndNeverNan) {
  auto s = FeatureSchema::parse(kTinySchema);
  auto tables = init_tables(s, 5);
  NormStats stats;
  stats.features["price"] = {2.0, 4.0};
  auto x0 = assemble_x0(make_record(s, {}), s, tables, stats);
  EXPECT_EQ(x0.data[0], 0.0);
  EXPECT_EQ(x0.data[1], 0.0);
  const auto& brand = tables.at("brand");
  ASSERT_EQ(brand.shape, (Shape{12, 3}));
  for (int j = 0; j < 3; ++j) EXPECT_EQ(x0.data[2 + j], brand.data[11 * 3 + j]);
  for (std::size_t i = 5; i < 11; ++i) EXPECT_EQ(x0.data[i], 0.0);
  for (double v : x0.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Assemble, EmbedDimScalingOnlyWidensOneSlice) {
  auto s = FeatureSchema::parse(kTinySchema);
  auto specs = s.specs();
  specs[1].embed_dim *= 2;
  FeatureSchema wide(specs);
  EXPECT_EQ(wide.input_width(), s.input_width() + 3);
  NormStats stats;
  stats.features["price"] = {0.0, 1.0};
  auto rec = make_record(s, {{"price", 1.5}, {"brand", std::uint64_t{4}}, {"title", std::string("hat")}});
  auto a = assemble_x0(rec, s, init_tables(s, 3), stats);
  auto b = assemble_x0(rec, wide, init_tables(wide, 3), stats);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.data[i], b.data[i]);
  for (std::size_t i = 5; i < a.numel(); ++i) EXPECT_EQ(a.data[i], b.data[i + 3]);
}

TEST(Assemble, DeterministicAndBatchMatchesSingle) {
  auto s = FeatureSchema::parse(kTinySchema);
  auto tables = init_tables(s, 9);
  NormStats stats;
  stats.features["price"] = {1.0, 3.0};
  std::vector<FeatureRecord> recs{
      make_record(s, {{"price", 4.0}, {"title", std::string("red shoe")}}),
      make_record(s, {{"brand", std::uint64_t{77}}, {"history", std::vector<std::uint64_t>{1, 2}}}),
  };
  Graph g;
  std::vector<Var> tv;
  for (const auto& spec : s.specs())
    if (spec.embedded()) tv.push_back(g.constant(tables.at(spec.name)));
  std::vector<EncodedItem> enc;
  for (const auto& r : recs) enc.push_back(encode_item(r, s, stats));
  std::vector<const EncodedItem*> ptrs{&enc[0], &enc[1]};
  Var x = assemble_batch(g, s, tv, ptrs);
  const auto& v = g.value(x);
  for (std::size_t r = 0; r < recs.size(); ++r) {
    auto single = assemble_x0(recs[r], s, tables, stats);
    EXPECT_EQ(single.data, assemble_x0(recs[r], s, tables, stats).data);
    for (std::size_t j = 0; j < single.numel(); ++j) EXPECT_EQ(v[r * single.numel() + j], single.data[j]);
  }
}

TEST(Assemble, MismatchedTablesRejected) {
  auto s = FeatureSchema::parse(kTinySchema);
  auto tables = init_tables(s, 1);
  tables.erase("title");
  NormStats stats;
  stats.features["price"] = {0.0, 1.0};
  EXPECT_THROW(assemble_x0(make_record(s, {}), s, tables, stats), SchemaError);
  auto bad = init_tables(s, 1);
  bad["brand"] = Tensor::zeros({11, 3});  // missing the unseen row
  EXPECT_THROW(assemble_x0(make_record(s, {}), s, bad, stats), DimensionError);
}

TEST(Records, ProjectionKeepsSharedFeatures) {
  auto s = FeatureSchema::parse(kTinySchema);
  auto wider = s.with(FeatureSpec{"extra", FeatureKind::kNumerical});
  auto r = make_record(s, {{"price", 2.0}, {"brand", std::uint64_t{5}}});
  auto p = project_record(r, s, wider);
  EXPECT_EQ(p.values.size(), 5u);
  EXPECT_TRUE(is_missing(p.values[4]));
  EXPECT_EQ(std::get<double>(p.values[0]), 2.0);
}
