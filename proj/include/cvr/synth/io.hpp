#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cvr/errors.hpp"
#include "cvr/hash.hpp"
#include "cvr/synth/generate.hpp"
#include "cvr/training/checkpoint.hpp"
#include "cvr/training/dataset.hpp"

// Day-partitioned record files:
//   day,query_id,item_idx,label_purchase,label_click,<values in schema order>
// MISSING is the literal `∅`; sequential keys are `;`-joined; text escapes
// `%`, `,`, CR and LF as %XX. `manifest.csv` lists `day,digest,count` with
// count = records (lines) in the day file.
namespace cvr {

inline constexpr std::string_view kMissingToken = "\xE2\x88\x85";  // ∅

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string escape_text(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '%': out += "%25"; break;
      case ',': out += "%2C"; break;
      case '\n': out += "%0A"; break;
      case '\r': out += "%0D"; break;
      default: out += c;
    }
  }
  if (out == kMissingToken) out = "%E2%88%85";
  return out;
}

inline std::string unescape_text(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out += s[i];
      continue;
    }
    unsigned v = 0;
    if (i + 2 >= s.size() || std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16).ptr != s.data() + i + 3)
      throw FormatError("record file: bad escape in text field");
    out += static_cast<char>(v);
    i += 2;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, const char* what) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(std::string("record file: bad ") + what + " '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto at = s.find(sep, start);
    out.push_back(s.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (at == std::string_view::npos) return out;
    start = at + 1;
  }
}

}  // namespace detail

inline std::string format_value(const FeatureValue& v) {
  if (is_missing(v)) return std::string(kMissingToken);
  if (const auto* d = std::get_if<double>(&v)) return detail::format_double(*d);
  if (const auto* k = std::get_if<std::uint64_t>(&v)) return std::to_string(*k);
  if (const auto* s = std::get_if<std::string>(&v)) return detail::escape_text(*s);
  const auto& keys = std::get<std::vector<std::uint64_t>>(v);
  std::string out;
  for (std::size_t i = 0; i < keys.size(); ++i) out += (i ? ";" : "") + std::to_string(keys[i]);
  return out;
}

inline FeatureValue parse_value(std::string_view s, FeatureKind kind) {
  if (s == kMissingToken) return Missing{};
  switch (kind) {
    case FeatureKind::kNumerical: return detail::parse_number<double>(s, "number");
    case FeatureKind::kCategorical: return detail::parse_number<std::uint64_t>(s, "key");
    case FeatureKind::kText: return detail::unescape_text(s);
    case FeatureKind::kSequential: {
      std::vector<std::uint64_t> keys;
      if (!s.empty())
        for (auto part : detail::split(s, ';')) keys.push_back(detail::parse_number<std::uint64_t>(part, "key"));
      return keys;
    }
  }
  throw FormatError("record file: unknown feature kind");
}

// Record lines of every group of `day`, in dataset order.
inline std::string serialize_day(const Dataset& d, std::uint32_t day) {
  const std::size_t purchase = d.task_index("purchase"), click = d.task_index("click");
  std::string out;
  for (const auto& g : d.groups) {
    if (g.day != day) continue;
    for (std::size_t i = 0; i < g.items.size(); ++i) {
      out += std::to_string(g.day) + ',' + std::to_string(g.query_id) + ',' + std::to_string(i) + ',' +
             std::to_string(g.labels[purchase][i]) + ',' + std::to_string(g.labels[click][i]);
      for (const auto& v : g.items[i].values) out += ',' + format_value(v);
      out += '\n';
    }
  }
  return out;
}

struct ManifestEntry {
  std::uint32_t day = 0;
  std::string digest;
  std::size_t count = 0;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline std::vector<ManifestEntry> manifest_of(const Dataset& d) {
  std::vector<ManifestEntry> out;
  for (std::uint32_t day : days_of(d)) {
    const std::string text = serialize_day(d, day);
    out.push_back({day, hex64(fnv1a(text)), static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'))});
  }
  return out;
}

inline std::string serialize_manifest(const std::vector<ManifestEntry>& m) {
  std::string out;
  for (const auto& e : m) out += std::to_string(e.day) + ',' + e.digest + ',' + std::to_string(e.count) + '\n';
  return out;
}

inline std::string dataset_digest(const Dataset& d) { return hex64(fnv1a(serialize_manifest(manifest_of(d)))); }

inline std::string day_file_name(std::uint32_t day) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "day_%03u.csv", day);
  return buf;
}

// Writes schema.txt, one record file per day, manifest.csv and, when given,
// spec.json (which lets a reader recompute planted utilities).
inline void write_dataset(const Dataset& d, const std::string& dir, const std::optional<SynthSpec>& spec = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  write_file_bytes((root / "schema.txt").string(), d.schema.serialize());
  for (std::uint32_t day : days_of(d)) write_file_bytes((root / day_file_name(day)).string(), serialize_day(d, day));
  write_file_bytes((root / "manifest.csv").string(), serialize_manifest(manifest_of(d)));
  if (spec) write_file_bytes((root / "spec.json").string(), to_json(*spec).dump(2) + "\n");
}

inline std::vector<ManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  for (auto line : detail::split(text, '\n')) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 3) throw FormatError("manifest: bad line '" + std::string(line) + "'");
    out.push_back({detail::parse_number<std::uint32_t>(f[0], "day"), std::string(f[1]),
                   detail::parse_number<std::size_t>(f[2], "count")});
  }
  return out;
}

// Parses one day file into groups (consecutive lines sharing a query id).
inline void parse_day(std::string_view text, const FeatureSchema& schema, Dataset& into) {
  const std::size_t purchase = into.task_index("purchase"), click = into.task_index("click");
  for (auto line : detail::split(text, '\n')) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 5 + schema.size())
      throw FormatError("record file: expected " + std::to_string(5 + schema.size()) + " fields, got " +
                        std::to_string(f.size()));
    const auto day = detail::parse_number<std::uint32_t>(f[0], "day");
    const auto qid = detail::parse_number<std::uint64_t>(f[1], "query id");
    const auto idx = detail::parse_number<std::size_t>(f[2], "item index");
    if (into.groups.empty() || into.groups.back().query_id != qid || into.groups.back().day != day) {
      RankingGroup g;
      g.day = day;
      g.query_id = qid;
      g.labels.assign(into.tasks.size(), {});
      into.groups.push_back(std::move(g));
    }
    RankingGroup& g = into.groups.back();
    if (idx != g.items.size()) throw FormatError("record file: item index out of sequence in query " + std::string(f[1]));
    g.labels[purchase].push_back(detail::parse_number<std::uint8_t>(f[3], "label"));
    g.labels[click].push_back(detail::parse_number<std::uint8_t>(f[4], "label"));
    FeatureRecord r;
    for (std::size_t i = 0; i < schema.size(); ++i) r.values.push_back(parse_value(f[5 + i], schema[i].kind));
    g.items.push_back(std::move(r));
  }
}

struct LoadedDataset {
  Dataset data;
  std::optional<SynthSpec> spec;
  std::string digest;
};

// Reads a dataset directory and checks every day file against the manifest.
inline LoadedDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  LoadedDataset out;
  out.data.schema = FeatureSchema::parse(read_file_bytes((root / "schema.txt").string()));
  const std::string manifest_text = read_file_bytes((root / "manifest.csv").string());
  for (const auto& e : parse_manifest(manifest_text)) {
    const std::string text = read_file_bytes((root / day_file_name(e.day)).string());
    if (hex64(fnv1a(text)) != e.digest) throw FormatError("dataset: digest mismatch for day " + std::to_string(e.day));
    if (static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) != e.count)
      throw FormatError("dataset: record count mismatch for day " + std::to_string(e.day));
    parse_day(text, out.data.schema, out.data);
  }
  out.digest = hex64(fnv1a(manifest_text));
  if (fs::exists(root / "spec.json")) {
    out.spec = synth_spec_from_json(nlohmann::json::parse(read_file_bytes((root / "spec.json").string())));
    for (auto& g : out.data.groups)
      for (const auto& r : g.items) g.utility.push_back(planted_utility(*out.spec, r));
  }
  return out;
}

}  // namespace cvr
