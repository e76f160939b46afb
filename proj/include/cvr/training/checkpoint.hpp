#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cvr/errors.hpp"
#include "cvr/hash.hpp"
#include "cvr/training/model.hpp"

// Binary checkpoint: `CVRCKPT1`, u64 LE header length, JSON header, zero
// padding to an 8-byte boundary, then LE float64 payloads. Tensor offsets in
// the header are relative to the payload start.
namespace cvr {

inline constexpr std::string_view kCheckpointMagic = "CVRCKPT1";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::string config_digest;
  nlohmann::json run_config = nlohmann::json::object();
  nlohmann::json metadata = nlohmann::json::object();  // steps, seed, dataset digest
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

inline nlohmann::json stats_to_json(const NormStats& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, m] : s.features) j[name] = {m.mean, m.std};
  return j;
}

inline NormStats stats_from_json(const nlohmann::json& j) {
  NormStats s;
  for (const auto& [name, v] : j.items()) s.features[name] = Moments{v.at(0).get<double>(), v.at(1).get<double>()};
  return s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.model.params.tensors()) {
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", t.numel()}});
    offset += 8 * t.numel();
  }
  const nlohmann::json header{{"version", kCheckpointVersion},
                              {"fingerprint", hex64(c.model.schema.fingerprint())},
                              {"schema", c.model.schema.serialize()},
                              {"config_digest", c.config_digest},
                              {"backbone", to_json(c.model.backbone)},
                              {"mmoe", to_json(c.model.mmoe)},
                              {"norm_stats", detail::stats_to_json(c.model.stats)},
                              {"run_config", c.run_config},
                              {"metadata", c.metadata},
                              {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic);
  detail::put_u64_le(out, text.size());
  out += text;
  while (out.size() % 8 != 0) out.push_back('\0');
  out.reserve(out.size() + offset);
  for (const auto& [_, t] : c.model.params.tensors())
    for (double v : t.data) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

struct CheckpointHeader {
  nlohmann::json json;
  std::size_t payload_start = 0;
};

// Parses and checks the header only; no tensor bytes are touched.
inline CheckpointHeader read_checkpoint_header(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const std::uint64_t len = detail::get_u64_le(bytes, 8);
  if (len > bytes.size() - 16) throw FormatError("checkpoint: header length exceeds file size");
  CheckpointHeader h;
  try {
    h.json = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (h.json.value("version", 0) != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + h.json.value("version", nlohmann::json()).dump());
  h.payload_start = (16 + len + 7) / 8 * 8;
  return h;
}

// Fingerprint stored in the header, checked against the embedded schema text.
inline std::uint64_t checkpoint_fingerprint(const CheckpointHeader& h) {
  const auto schema = FeatureSchema::parse(h.json.at("schema").get<std::string>());
  const std::string stored = h.json.at("fingerprint").get<std::string>();
  if (hex64(schema.fingerprint()) != stored) throw FormatError("checkpoint: fingerprint does not match schema");
  return schema.fingerprint();
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  const auto h = read_checkpoint_header(bytes);
  try {
    checkpoint_fingerprint(h);
    Checkpoint c;
    c.model.schema = FeatureSchema::parse(h.json.at("schema").get<std::string>());
    c.model.backbone = backbone_from_json(h.json.at("backbone"));
    c.model.mmoe = mmoe_from_json(h.json.at("mmoe"));
    c.model.stats = detail::stats_from_json(h.json.at("norm_stats"));
    c.config_digest = h.json.at("config_digest").get<std::string>();
    c.run_config = h.json.at("run_config");
    c.metadata = h.json.at("metadata");
    for (const auto& e : h.json.at("tensors")) {
      const auto shape = e.at("shape").get<Shape>();
      const auto count = e.at("count").get<std::uint64_t>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      if (shape_numel(shape) != count || offset % 8 != 0) throw FormatError("checkpoint: inconsistent tensor entry");
      if (h.payload_start + offset + 8 * count > bytes.size()) throw FormatError("checkpoint: truncated payload");
      std::vector<double> data(count);
      for (std::size_t i = 0; i < count; ++i)
        data[i] = std::bit_cast<double>(detail::get_u64_le(bytes, h.payload_start + offset + 8 * i));
      c.model.params.set(e.at("name").get<std::string>(), Tensor(shape, std::move(data)));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed for " + path);
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(c));
}
inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file_bytes(path)); }

inline std::string checkpoint_digest(const Checkpoint& c) { return hex64(fnv1a(serialize_checkpoint(c))); }

}  // namespace cvr
