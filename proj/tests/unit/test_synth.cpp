#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "cvr/errors.hpp"
#include "cvr/synth/generate.hpp"
#include "cvr/synth/io.hpp"

using namespace cvr;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec(std::uint64_t seed = 7) {
  SynthSpec s = canonical_spec(seed);
  s.n_days = 6;
  s.groups_per_day = 15;
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cvr_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::size_t count_purchases(const RankingGroup& g) {
  return static_cast<std::size_t>(std::count(g.labels[1].begin(), g.labels[1].end(), 1));
}

}  // namespace

TEST(Synth, CanonicalDatasetGoldens) {
  const Dataset d = generate(canonical_spec(7));
  EXPECT_EQ(d.groups.size(), 24u * 200u);
  EXPECT_EQ(dataset_digest(d), "e30ad30b4466062a");
  EXPECT_NEAR(oracle_map(d), 0.90820039682539744, 1e-12);
}

TEST(Synth, DeterministicAndIndependentOfGroupCount) {
  const auto a = generate(small_spec());
  const auto b = generate(small_spec());
  EXPECT_EQ(dataset_digest(a), dataset_digest(b));
  auto more = small_spec();
  more.groups_per_day = 20;
  const auto c = generate(more);
  // Group i of day d is identical whatever the number of groups per day.
  for (const auto& g : a.groups) {
    auto it = std::find_if(c.groups.begin(), c.groups.end(), [&](const auto& h) { return h.query_id == g.query_id; });
    ASSERT_NE(it, c.groups.end());
    EXPECT_EQ(it->items, g.items);
    EXPECT_EQ(it->labels, g.labels);
  }
  EXPECT_NE(dataset_digest(generate(small_spec(8))), dataset_digest(a));
}

TEST(Synth, ExactlyOnePurchaseAndSizesInRange) {
  auto s = small_spec();
  s.min_items = 3;
  s.max_items = 9;
  std::set<std::size_t> sizes;
  for (const auto& g : generate(s).groups) {
    EXPECT_EQ(count_purchases(g), 1u);
    EXPECT_GE(g.items.size(), 3u);
    EXPECT_LE(g.items.size(), 9u);
    sizes.insert(g.items.size());
    EXPECT_NO_THROW(validate_group(g, 2, 1));
  }
  EXPECT_GT(sizes.size(), 3u);
  s.multi_purchase = true;
  std::size_t multi = 0;
  for (const auto& g : generate(s).groups) {
    EXPECT_GE(count_purchases(g), 1u);
    multi += count_purchases(g) > 1;
  }
  EXPECT_GT(multi, 0u);
}

TEST(Synth, ZeroTemperaturePurchasesTheArgmax) {
  auto s = small_spec();
  s.tau = 0.0;
  const auto d = generate(s);
  for (const auto& g : d.groups) {
    const auto best = ranking(g.utility)[0];
    EXPECT_EQ(g.labels[1][best], 1);
  }
  EXPECT_EQ(oracle_map(d), 1.0);
}

TEST(Synth, AvailabilityWindows) {
  auto s = small_spec();
  const std::size_t hist = s.schema.index_of("history");
  for (const auto& g : generate(s).groups)
    for (const auto& r : g.items) EXPECT_EQ(is_missing(r.values[hist]), g.day < 4) << "day " << g.day;
  s.available_from.clear();
  for (const auto& g : generate(s).groups)
    for (const auto& r : g.items)
      for (const auto& v : r.values) EXPECT_FALSE(is_missing(v));
}

TEST(Synth, UtilityIsRecomputableFromRecords) {
  const auto s = small_spec();
  for (const auto& g : generate(s).groups)
    for (std::size_t i = 0; i < g.items.size(); ++i) EXPECT_EQ(planted_utility(s, g.items[i]), g.utility[i]);
}

TEST(Synth, PlantedMonotonicity) {
  const auto s = small_spec();
  const std::size_t q = s.schema.index_of("qi_ctr");
  for (const auto& g : generate(s).groups)
    for (const auto& r : g.items) {
      const double base = planted_utility(s, r);
      for (double bump : {0.001, 0.1, 2.0}) {
        auto up = r;
        up.values[q] = std::get<double>(r.values[q]) + bump;
        EXPECT_GE(planted_utility(s, up), base);
      }
    }
}

TEST(Synth, NumericalsLieOnTheQuantizationGrid) {
  for (const auto& g : generate(small_spec()).groups)
    for (const auto& r : g.items)
      for (const auto& v : r.values)
        if (const double* x = std::get_if<double>(&v)) EXPECT_EQ(quantize(*x), *x);
  EXPECT_EQ(quantize(0.5 * kSynthQuantum), 0.0);  // half to even
  EXPECT_EQ(quantize(1.5 * kSynthQuantum), 2.0 * kSynthQuantum);
}

TEST(Synth, ClickLabelsAreDenserThanPurchases) {
  std::size_t clicks = 0, purchases = 0;
  for (const auto& g : generate(small_spec()).groups) {
    clicks += static_cast<std::size_t>(std::count(g.labels[0].begin(), g.labels[0].end(), 1));
    purchases += count_purchases(g);
  }
  EXPECT_GT(clicks, purchases);
}

TEST(Window, SelectsMostRecentDays) {
  const auto s = small_spec();
  const auto d = generate(s);
  EXPECT_EQ(dataset_digest(window(d, s.n_days)), dataset_digest(d));
  const auto one = window(d, 1);
  EXPECT_EQ(one.groups.size(), s.groups_per_day);
  for (const auto& g : one.groups) EXPECT_EQ(g.day, s.n_days - 1);
  EXPECT_THROW(window(d, 0), ContractError);
  EXPECT_THROW(window(d, s.n_days + 1), ContractError);
}

TEST(Window, DigestsArePrefixConsistent) {
  const auto d = generate(small_spec());
  for (std::size_t a = 1; a < 6; ++a) {
    const auto ma = manifest_of(window(d, a));
    const auto mb = manifest_of(window(d, a + 1));
    ASSERT_EQ(ma.size() + 1, mb.size());
    EXPECT_TRUE(std::equal(ma.begin(), ma.end(), mb.begin() + 1));
  }
}

TEST(Window, HoldoutSplitIsDisjoint) {
  const auto [train, eval] = split_holdout(generate(small_spec()), 2);
  EXPECT_EQ(days_of(train), (std::vector<std::uint32_t>{0, 1, 2, 3}));
  EXPECT_EQ(days_of(eval), (std::vector<std::uint32_t>{4, 5}));
}

TEST(RecordFormat, ValuesRoundTrip) {
  const std::vector<std::pair<FeatureValue, FeatureKind>> cases{
      {0.1, FeatureKind::kNumerical},
      {-1234.5678, FeatureKind::kNumerical},
      {std::uint64_t{18446744073709551615ULL}, FeatureKind::kCategorical},
      {std::string("a,b%c\nd"), FeatureKind::kText},
      {std::string("\xE2\x88\x85"), FeatureKind::kText},
      {std::string(""), FeatureKind::kText},
      {std::vector<std::uint64_t>{}, FeatureKind::kSequential},
      {std::vector<std::uint64_t>{3, 1, 4}, FeatureKind::kSequential},
      {Missing{}, FeatureKind::kText},
      {Missing{}, FeatureKind::kNumerical},
  };
  for (const auto& [v, kind] : cases) {
    const std::string text = format_value(v);
    EXPECT_EQ(text.find(','), std::string::npos);
    EXPECT_EQ(parse_value(text, kind), v) << text;
  }
  EXPECT_EQ(format_value(Missing{}), "\xE2\x88\x85");
  EXPECT_EQ(format_value(std::vector<std::uint64_t>{1, 2}), "1;2");
  EXPECT_THROW(parse_value("x1", FeatureKind::kNumerical), FormatError);
}

TEST(RecordFormat, LineLayout) {
  const auto d = generate(small_spec());
  const std::string text = serialize_day(d, 0);
  const std::string first = text.substr(0, text.find('\n'));
  EXPECT_EQ(first.rfind("0,0,0,", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(first.begin(), first.end(), ',')), 4 + d.schema.size());
  EXPECT_NE(first.find("\xE2\x88\x85"), std::string::npos);  // day 0 has no history
}

TEST(DatasetFiles, RoundTripAndManifest) {
  const auto s = small_spec();
  const auto d = generate(s);
  const auto dir = temp_dir("roundtrip");
  write_dataset(d, dir.string(), s);
  const auto loaded = load_dataset(dir.string());
  EXPECT_EQ(loaded.digest, dataset_digest(d));
  ASSERT_EQ(loaded.data.groups.size(), d.groups.size());
  for (std::size_t i = 0; i < d.groups.size(); ++i) {
    EXPECT_EQ(loaded.data.groups[i].query_id, d.groups[i].query_id);
    EXPECT_EQ(loaded.data.groups[i].items, d.groups[i].items);
    EXPECT_EQ(loaded.data.groups[i].labels, d.groups[i].labels);
    EXPECT_EQ(loaded.data.groups[i].utility, d.groups[i].utility);
  }
  ASSERT_TRUE(loaded.spec.has_value());
  EXPECT_EQ(to_json(*loaded.spec), to_json(s));
  const auto manifest = parse_manifest(read_file_bytes((dir / "manifest.csv").string()));
  EXPECT_EQ(manifest, manifest_of(d));
  fs::remove_all(dir);
}

TEST(DatasetFiles, CorruptionIsDetected) {
  const auto d = generate(small_spec());
  const auto dir = temp_dir("corrupt");
  write_dataset(d, dir.string());
  auto text = read_file_bytes((dir / day_file_name(2)).string());
  text[text.size() / 2] = text[text.size() / 2] == '1' ? '2' : '1';
  write_file_bytes((dir / day_file_name(2)).string(), text);
  EXPECT_THROW(load_dataset(dir.string()), FormatError);
  fs::remove_all(dir);
}

TEST(SynthSpecJson, RoundTripAndValidation) {
  const auto s = canonical_spec(99);
  EXPECT_EQ(to_json(synth_spec_from_json(to_json(s))), to_json(s));
  auto bad = s;
  bad.weights.affinity_feature = "qi_ctr";
  EXPECT_THROW(bad.validate(), SchemaError);
  bad = s;
  bad.min_items = 9;
  bad.max_items = 3;
  EXPECT_THROW(bad.validate(), ContractError);
}
