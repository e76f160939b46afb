#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cvr/backbones/config.hpp"
#include "cvr/errors.hpp"
#include "cvr/hash.hpp"
#include "cvr/multitask/mmoe.hpp"
#include "cvr/numerics/optim.hpp"

namespace cvr {

struct ScheduleConfig {
  double lr_peak = 5e-4;
  double lr_final = 1e-4;
  double warmup_fraction = 0.1;  // of total steps

  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct RunConfig {
  std::string schema_path;
  BackboneConfig backbone{MaskNetConfig{}};
  MmoeConfig mmoe;
  ScheduleConfig schedule;
  std::size_t batch_groups = 32;
  std::size_t epochs = 5;
  std::uint64_t seed = 0;
  std::size_t window_days = 0;  // 0 -> every training day
  std::optional<std::string> warmstart_from;
  std::size_t log_every = 10;

  void validate() const {
    cvr::validate(backbone);
    mmoe.validate();
    if (batch_groups < 1) throw ConfigError("run config: batch_groups must be >= 1");
    if (log_every < 1) throw ConfigError("run config: log_every must be >= 1");
    if (!(schedule.lr_peak >= 0.0) || !(schedule.lr_final >= 0.0))
      throw ConfigError("run config: learning rates must be non-negative");
    if (!(schedule.warmup_fraction >= 0.0 && schedule.warmup_fraction <= 1.0))
      throw ConfigError("run config: warmup_fraction must be in [0, 1]");
  }

  LrSchedule lr_schedule(std::uint64_t total_steps) const {
    LrSchedule s;
    s.total_steps = std::max<std::uint64_t>(total_steps, 1);
    s.warmup_steps = static_cast<std::uint64_t>(std::llround(schedule.warmup_fraction * static_cast<double>(s.total_steps)));
    s.lr_peak = schedule.lr_peak;
    s.lr_final = schedule.lr_final;
    return s;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j{{"schema_path", c.schema_path},
                   {"backbone", to_json(c.backbone)},
                   {"mmoe", to_json(c.mmoe)},
                   {"schedule",
                    {{"lr_peak", c.schedule.lr_peak},
                     {"lr_final", c.schedule.lr_final},
                     {"warmup_fraction", c.schedule.warmup_fraction}}},
                   {"batch_groups", c.batch_groups},
                   {"epochs", c.epochs},
                   {"seed", c.seed},
                   {"window_days", c.window_days},
                   {"log_every", c.log_every}};
  j["warmstart_from"] = c.warmstart_from ? nlohmann::json(*c.warmstart_from) : nlohmann::json(nullptr);
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  try {
    RunConfig c;
    c.schema_path = j.value("schema_path", c.schema_path);
    if (j.contains("backbone")) c.backbone = backbone_from_json(j.at("backbone"));
    if (j.contains("mmoe")) c.mmoe = mmoe_from_json(j.at("mmoe"));
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      c.schedule.lr_peak = s.value("lr_peak", c.schedule.lr_peak);
      c.schedule.lr_final = s.value("lr_final", c.schedule.lr_final);
      c.schedule.warmup_fraction = s.value("warmup_fraction", c.schedule.warmup_fraction);
    }
    c.batch_groups = j.value("batch_groups", c.batch_groups);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.window_days = j.value("window_days", c.window_days);
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("warmstart_from") && !j.at("warmstart_from").is_null())
      c.warmstart_from = j.at("warmstart_from").get<std::string>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open run config " + path);
  try {
    return run_config_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("run config " + path + ": " + e.what());
  }
}

// JSON objects serialize with sorted keys, so the dump is canonical.
inline std::string config_digest(const nlohmann::json& j) { return hex64(fnv1a(j.dump())); }
inline std::string config_digest(const RunConfig& c) { return config_digest(to_json(c)); }

}  // namespace cvr
