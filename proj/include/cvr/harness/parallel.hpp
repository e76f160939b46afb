#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cvr/errors.hpp"
#include "cvr/harness/grid.hpp"

namespace cvr {

inline nlohmann::json to_json(const CellResult& c) {
  return {{"map", c.map},
          {"groups_per_sec", c.groups_per_sec},
          {"wall_s", c.wall_s},
          {"inference_flops", c.inference_flops},
          {"checkpoint_digest", c.checkpoint_digest}};
}

inline CellResult cell_result_from_json(const nlohmann::json& j) {
  return {j.at("map").get<double>(), j.at("groups_per_sec").get<double>(), j.at("wall_s").get<double>(),
          j.at("inference_flops").get<std::uint64_t>(), j.at("checkpoint_digest").get<std::string>()};
}

// Key identifying a cell by its run config and schema.
inline std::string cell_key(const RunConfig& cfg, const FeatureSchema& schema) {
  return config_digest(to_json(cfg)) + ":" + hex64(schema.fingerprint());
}

namespace detail {

struct Child {
  pid_t pid = -1;
  int fd = -1;
  std::string key;
};

inline std::string drain_fd(int fd) {
  std::string out;
  char buf[4096];
  for (;;) {
    const ssize_t n = ::read(fd, buf, sizeof buf);
    if (n > 0) {
      out.append(buf, static_cast<std::size_t>(n));
    } else if (n == 0 || errno != EINTR) {
      break;
    }
  }
  ::close(fd);
  return out;
}

}  // namespace detail

// Runs every grid cell in its own forked process, at most `jobs` at a time,
// and returns a runner that serves the precomputed results. A cell whose
// process failed rethrows its message when the grid asks for it.
inline CellRunner precompute_cells_in_processes(const GridSpec& g, const ExperimentData& data, std::size_t jobs) {
  if (jobs < 1) throw ConfigError("grid: jobs must be >= 1");
  g.validate();
  const FeatureSchema& schema = data.train.schema;
  std::vector<std::size_t> values = g.values;
  const std::size_t base_value = g.base_value.value_or(factor_value(g.base, schema, g.factor));
  if (std::find(values.begin(), values.end(), base_value) == values.end()) values.insert(values.begin(), base_value);
  std::vector<std::pair<RunConfig, FeatureSchema>> cells;
  for (auto v : values)
    for (auto seed : g.seeds) cells.push_back(grid_cell(g, schema, v, seed));

  auto results = std::make_shared<std::map<std::string, nlohmann::json>>();
  std::vector<detail::Child> running;
  auto reap = [&](detail::Child c) {
    const std::string text = detail::drain_fd(c.fd);
    int status = 0;
    ::waitpid(c.pid, &status, 0);
    nlohmann::json j;
    if (WIFEXITED(status) && WEXITSTATUS(status) == 0 && nlohmann::json::accept(text))
      j = nlohmann::json::parse(text);
    else
      j = {{"error", text.empty() ? std::string("cell process exited abnormally") : text}};
    (*results)[c.key] = std::move(j);
  };
  for (const auto& [cfg, cell_schema] : cells) {
    const std::string key = cell_key(cfg, cell_schema);
    if (results->count(key)) continue;
    if (running.size() == jobs) {
      reap(running.front());
      running.erase(running.begin());
    }
    int fds[2];
    if (::pipe(fds) != 0) throw ContractError("grid: pipe failed");
    const pid_t pid = ::fork();
    if (pid < 0) throw ContractError("grid: fork failed");
    if (pid == 0) {
      ::close(fds[0]);
      std::string out;
      int code = 0;
      try {
        out = to_json(run_cell(cfg, data, cell_schema)).dump();
      } catch (const std::exception& e) {
        out = e.what();
        code = 1;
      }
      std::size_t off = 0;
      while (off < out.size()) {
        const ssize_t n = ::write(fds[1], out.data() + off, out.size() - off);
        if (n <= 0 && errno != EINTR) break;
        if (n > 0) off += static_cast<std::size_t>(n);
      }
      ::_exit(code);
    }
    ::close(fds[1]);
    running.push_back({pid, fds[0], key});
    (*results)[key] = nullptr;  // reserved
  }
  for (auto& c : running) reap(c);

  return [results](const RunConfig& cfg, const FeatureSchema& s) {
    const auto& j = results->at(cell_key(cfg, s));
    if (j.contains("error")) throw std::runtime_error(j.at("error").get<std::string>());
    return cell_result_from_json(j);
  };
}

}  // namespace cvr
