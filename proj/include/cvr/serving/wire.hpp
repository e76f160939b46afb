#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/features/record.hpp"
#include "cvr/features/schema.hpp"

namespace cvr {

// Frame: u32 big-endian payload length, then the payload. All integers and
// floats on the wire are big-endian.
//
// Request payload:  u64 id | u16 n | n records in schema order
//   numerical    f32, NaN = MISSING
//   categorical  u64 key, 0xFFFFFFFFFFFFFFFF = MISSING
//   text         u32 byte length + UTF-8 bytes, length 0xFFFFFFFF = MISSING
//   sequential   u16 count + count u64 keys, count 0xFFFF = MISSING
// Response payload: u64 id | u16 n | n f32 scores
//   n = 0xFFFF with no scores is the overload response.
inline constexpr std::uint32_t kMaxPayloadBytes = 16u << 20;
inline constexpr std::uint16_t kMaxRequestItems = 0xFFFE;
inline constexpr std::uint16_t kOverloadCount = 0xFFFF;
inline constexpr std::uint64_t kMissingKey = std::numeric_limits<std::uint64_t>::max();
inline constexpr std::uint32_t kMissingTextLength = 0xFFFFFFFF;
inline constexpr std::uint16_t kMissingListLength = 0xFFFF;

struct ScoreRequest {
  std::uint64_t id = 0;
  std::vector<FeatureRecord> records;
};

struct ScoreResponse {
  std::uint64_t id = 0;
  bool overloaded = false;
  std::vector<float> scores;

  friend bool operator==(const ScoreResponse&, const ScoreResponse&) = default;
};

namespace wire {

class Writer {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto v = s_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw FormatError("wire: payload truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | static_cast<unsigned char>(s_[pos_++]);
    return v;
  }
  std::string_view s_;
  std::size_t pos_ = 0;
};

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    i += len;
  }
  return true;
}

inline void write_value(Writer& w, const FeatureValue& v, FeatureKind kind) {
  const bool missing = is_missing(v);
  switch (kind) {
    case FeatureKind::kNumerical: {
      if (missing) return w.f32(std::numeric_limits<float>::quiet_NaN());
      const double x = std::get<double>(v);
      if (std::isnan(x)) throw ContractError("wire: NaN numerical value is reserved for MISSING");
      return w.f32(static_cast<float>(x));
    }
    case FeatureKind::kCategorical: {
      if (missing) return w.u64(kMissingKey);
      const auto key = std::get<std::uint64_t>(v);
      if (key == kMissingKey) throw ContractError("wire: categorical key 2^64-1 is reserved for MISSING");
      return w.u64(key);
    }
    case FeatureKind::kText: {
      if (missing) return w.u32(kMissingTextLength);
      const auto& s = std::get<std::string>(v);
      if (s.size() >= kMissingTextLength) throw ContractError("wire: text value too long");
      w.u32(static_cast<std::uint32_t>(s.size()));
      return w.bytes(s);
    }
    case FeatureKind::kSequential: {
      if (missing) return w.u16(kMissingListLength);
      const auto& keys = std::get<std::vector<std::uint64_t>>(v);
      if (keys.size() >= kMissingListLength) throw ContractError("wire: key list too long");
      w.u16(static_cast<std::uint16_t>(keys.size()));
      for (auto k : keys) w.u64(k);
      return;
    }
  }
}

inline FeatureValue read_value(Reader& r, FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kNumerical: {
      const float x = r.f32();
      if (std::isnan(x)) return Missing{};
      return static_cast<double>(x);
    }
    case FeatureKind::kCategorical: {
      const auto k = r.u64();
      if (k == kMissingKey) return Missing{};
      return k;
    }
    case FeatureKind::kText: {
      const auto n = r.u32();
      if (n == kMissingTextLength) return Missing{};
      std::string s(r.bytes(n));
      if (!valid_utf8(s)) throw FormatError("wire: text value is not valid UTF-8");
      return s;
    }
    case FeatureKind::kSequential: {
      const auto n = r.u16();
      if (n == kMissingListLength) return Missing{};
      std::vector<std::uint64_t> keys(n);
      for (auto& k : keys) k = r.u64();
      return keys;
    }
  }
  throw FormatError("wire: unknown feature kind");
}

inline std::string frame(std::string payload) {
  if (payload.size() > kMaxPayloadBytes) throw ContractError("wire: payload exceeds 16 MiB");
  Writer w;
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload);
  return std::move(w.str());
}

}  // namespace wire

// Numerical values travel as float32; MISSING and the reserved sentinels are
// the only values that do not round-trip through the wire.
inline std::string encode_request(const ScoreRequest& req, const FeatureSchema& schema) {
  if (req.records.size() > kMaxRequestItems) throw ContractError("wire: too many items in one request");
  wire::Writer w;
  w.u64(req.id);
  w.u16(static_cast<std::uint16_t>(req.records.size()));
  for (const auto& rec : req.records) {
    validate_record(rec, schema);
    for (std::size_t i = 0; i < schema.size(); ++i) wire::write_value(w, rec.values[i], schema[i].kind);
  }
  return wire::frame(std::move(w.str()));
}

// `payload` excludes the 4-byte length prefix.
inline ScoreRequest decode_request(std::string_view payload, const FeatureSchema& schema) {
  wire::Reader r(payload);
  ScoreRequest req;
  req.id = r.u64();
  const auto n = r.u16();
  if (n > kMaxRequestItems) throw FormatError("wire: request item count is reserved");
  req.records.resize(n);
  for (auto& rec : req.records) {
    rec.values.reserve(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) rec.values.push_back(wire::read_value(r, schema[i].kind));
  }
  if (!r.done()) throw FormatError("wire: trailing bytes after request");
  return req;
}

inline std::string encode_response(const ScoreResponse& resp) {
  wire::Writer w;
  w.u64(resp.id);
  if (resp.overloaded) {
    w.u16(kOverloadCount);
  } else {
    if (resp.scores.size() > kMaxRequestItems) throw ContractError("wire: too many scores in one response");
    w.u16(static_cast<std::uint16_t>(resp.scores.size()));
    for (float s : resp.scores) w.f32(s);
  }
  return wire::frame(std::move(w.str()));
}

inline ScoreResponse decode_response(std::string_view payload) {
  wire::Reader r(payload);
  ScoreResponse resp;
  resp.id = r.u64();
  const auto n = r.u16();
  if (n == kOverloadCount) {
    resp.overloaded = true;
  } else {
    resp.scores.resize(n);
    for (auto& s : resp.scores) s = r.f32();
  }
  if (!r.done()) throw FormatError("wire: trailing bytes after response");
  return resp;
}

// Length prefix of a frame header; rejects oversized payloads before reading them.
inline std::uint32_t frame_length(std::string_view header) {
  wire::Reader r(header);
  const auto n = r.u32();
  if (n > kMaxPayloadBytes) throw FormatError("wire: frame length " + std::to_string(n) + " exceeds 16 MiB");
  return n;
}

}  // namespace cvr
