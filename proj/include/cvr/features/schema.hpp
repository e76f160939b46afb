#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/hash.hpp"

namespace cvr {

enum class FeatureKind { kNumerical, kCategorical, kText, kSequential };

inline std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::kNumerical: return "numerical";
    case FeatureKind::kCategorical: return "categorical";
    case FeatureKind::kText: return "text";
    case FeatureKind::kSequential: return "sequential";
  }
  return "?";
}

inline FeatureKind parse_feature_kind(std::string_view s) {
  if (s == "numerical") return FeatureKind::kNumerical;
  if (s == "categorical") return FeatureKind::kCategorical;
  if (s == "text") return FeatureKind::kText;
  if (s == "sequential") return FeatureKind::kSequential;
  throw SchemaError("unknown feature kind '" + std::string(s) + "'");
}

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kNumerical;
  std::uint64_t vocab_size = 1;  // hash modulus (categorical, text, sequential)
  std::size_t embed_dim = 1;
  std::size_t ngram_n = 3;  // text
  std::size_t max_len = 1;  // sequential

  bool embedded() const noexcept { return kind != FeatureKind::kNumerical; }

  // Columns this feature contributes to x0.
  std::size_t width() const noexcept { return kind == FeatureKind::kNumerical ? 2 : embed_dim; }

  // Categorical tables carry one extra row at index vocab_size: the `unseen`
  // placeholder for MISSING values.
  std::size_t table_rows() const noexcept {
    return kind == FeatureKind::kCategorical ? static_cast<std::size_t>(vocab_size) + 1
                                             : static_cast<std::size_t>(vocab_size);
  }

  // Canonical one-line form: `name kind key=value ...` with a fixed key order.
  std::string canonical() const {
    std::ostringstream os;
    os << name << ' ' << to_string(kind);
    switch (kind) {
      case FeatureKind::kNumerical: break;
      case FeatureKind::kCategorical: os << " vocab_size=" << vocab_size << " embed_dim=" << embed_dim; break;
      case FeatureKind::kText:
        os << " ngram_n=" << ngram_n << " vocab_size=" << vocab_size << " embed_dim=" << embed_dim;
        break;
      case FeatureKind::kSequential:
        os << " max_len=" << max_len << " vocab_size=" << vocab_size << " embed_dim=" << embed_dim;
        break;
    }
    return os.str();
  }

  void validate() const {
    if (name.empty()) throw SchemaError("feature name must be non-empty");
    for (char c : name)
      if (c == ' ' || c == '\t' || c == ',' || c == '\n' || c == '/')
        throw SchemaError("feature name '" + name + "' contains a reserved character");
    if (embedded()) {
      if (vocab_size < 1) throw SchemaError("feature '" + name + "': vocab_size must be >= 1");
      if (vocab_size > (std::uint64_t{1} << 31))
        throw SchemaError("feature '" + name + "': vocab_size too large");
      if (embed_dim < 1) throw SchemaError("feature '" + name + "': embed_dim must be >= 1");
    }
    if (kind == FeatureKind::kText && ngram_n < 1) throw SchemaError("feature '" + name + "': ngram_n must be >= 1");
    if (kind == FeatureKind::kSequential && max_len < 1)
      throw SchemaError("feature '" + name + "': max_len must be >= 1");
  }

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

// Ordered feature list. The fingerprint is FNV-1a over the canonical text, so
// it changes exactly when some spec (or the order) changes.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureSpec> specs) : specs_(std::move(specs)) {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      specs_[i].validate();
      if (!index_.emplace(specs_[i].name, i).second)
        throw SchemaError("duplicate feature name '" + specs_[i].name + "'");
    }
  }

  static FeatureSchema parse(std::string_view text) {
    std::vector<FeatureSpec> specs;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      FeatureSpec spec;
      std::string kind;
      if (!(ls >> spec.name)) continue;
      if (!(ls >> kind)) throw SchemaError("schema line " + std::to_string(lineno) + ": missing kind");
      spec.kind = parse_feature_kind(kind);
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw SchemaError("schema line " + std::to_string(lineno) + ": expected key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        std::uint64_t value = 0;
        try {
          std::size_t used = 0;
          value = std::stoull(kv.substr(eq + 1), &used);
          if (used != kv.size() - eq - 1) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw SchemaError("schema line " + std::to_string(lineno) + ": bad value in '" + kv + "'");
        }
        if (key == "vocab_size") spec.vocab_size = value;
        else if (key == "embed_dim") spec.embed_dim = value;
        else if (key == "ngram_n") spec.ngram_n = value;
        else if (key == "max_len") spec.max_len = value;
        else throw SchemaError("schema line " + std::to_string(lineno) + ": unknown parameter '" + key + "'");
      }
      specs.push_back(std::move(spec));
    }
    return FeatureSchema(std::move(specs));
  }

  static FeatureSchema load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw SchemaError("cannot open schema file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  std::string serialize() const {
    std::string out;
    for (const auto& s : specs_) out += s.canonical() + "\n";
    return out;
  }

  std::uint64_t fingerprint() const { return fnv1a(serialize()); }

  const std::vector<FeatureSpec>& specs() const noexcept { return specs_; }
  std::size_t size() const noexcept { return specs_.size(); }
  const FeatureSpec& operator[](std::size_t i) const { return specs_[i]; }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw SchemaError("unknown feature '" + std::string(name) + "'");
  }
  const FeatureSpec& spec(std::string_view name) const { return specs_[index_of(name)]; }

  // D: total x0 width, a pure function of the feature specs.
  std::size_t input_width() const noexcept {
    std::size_t d = 0;
    for (const auto& s : specs_) d += s.width();
    return d;
  }

  // Column offset of feature i inside x0.
  std::size_t offset_of(std::size_t i) const noexcept {
    std::size_t d = 0;
    for (std::size_t j = 0; j < i; ++j) d += specs_[j].width();
    return d;
  }

  FeatureSchema with(FeatureSpec extra) const {
    auto specs = specs_;
    specs.push_back(std::move(extra));
    return FeatureSchema(std::move(specs));
  }

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) { return a.specs_ == b.specs_; }

 private:
  std::vector<FeatureSpec> specs_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace cvr
