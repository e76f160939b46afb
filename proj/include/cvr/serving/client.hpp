#pragma once

#include <chrono>
#include <future>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/serving/batcher.hpp"
#include "cvr/serving/latency.hpp"
#include "cvr/serving/simulate.hpp"
#include "cvr/serving/socket.hpp"
#include "cvr/serving/wire.hpp"

namespace cvr {

class OverloadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScoreClient {
 public:
  ScoreClient(const std::string& host, std::uint16_t port, FeatureSchema schema)
      : sock_(connect_tcp(host, port)), schema_(std::move(schema)) {}

  void send(std::uint64_t id, std::span<const FeatureRecord> records) {
    ScoreRequest req{id, {records.begin(), records.end()}};
    write_all(sock_.fd(), encode_request(req, schema_));
  }

  ScoreResponse receive() {
    auto payload = read_frame(sock_.fd());
    if (!payload) throw SocketError("server closed the connection");
    return decode_response(*payload);
  }

  // Half-closes the sending side; responses can still be read.
  void finish_sending() { ::shutdown(sock_.fd(), SHUT_WR); }
  void abort() { sock_.shutdown(); }

 private:
  Socket sock_;
  FeatureSchema schema_;
};

// Client-side batching: sends one query's items as ceil(n / max) requests,
// then reassembles the scores in the original item order.
inline std::vector<float> score_query(ScoreClient& client, std::span<const FeatureRecord> items,
                                      std::size_t max_per_request, std::uint64_t& next_id) {
  const auto sizes = client_chunks(items.size(), max_per_request);
  const std::uint64_t first = next_id;
  std::size_t off = 0;
  for (auto n : sizes) {
    client.send(next_id++, items.subspan(off, n));
    off += n;
  }
  std::vector<float> scores;
  scores.reserve(items.size());
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const auto resp = client.receive();
    if (resp.id != first + k) throw FormatError("response id " + std::to_string(resp.id) + " out of order");
    if (resp.overloaded) throw OverloadError("server overloaded on request " + std::to_string(resp.id));
    if (resp.scores.size() != sizes[k]) throw FormatError("response item count differs from request");
    scores.insert(scores.end(), resp.scores.begin(), resp.scores.end());
  }
  return scores;
}

struct LoadgenConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  double qps = 100.0;
  double duration_s = 10.0;
  std::size_t items = 8;
  std::uint64_t seed = 0;
  double drain_timeout_s = 10.0;  // wait for stragglers after the last send
};

// Open-loop Poisson load over one connection. Latency runs from each
// request's scheduled send time to its response, so a slow server cannot
// hold back the offered rate. Connection failure yields a partial report
// flagged invalid.
inline LatencyReport run_loadgen(const LoadgenConfig& cfg, const FeatureSchema& schema,
                                 std::span<const FeatureRecord> pool) {
  if (!(cfg.qps > 0.0)) throw ContractError("loadgen: qps must be > 0");
  if (cfg.items < 1 || cfg.items > kMaxRequestItems) throw ContractError("loadgen: items per request out of range");
  if (pool.empty()) throw ContractError("loadgen: empty record pool");
  const auto schedule = poisson_arrivals(cfg.qps, cfg.duration_s, cfg.seed);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> latency(schedule.size(), inf);
  if (schedule.empty()) return make_latency_report({}, 0, cfg.qps, cfg.duration_s);

  std::vector<std::vector<FeatureRecord>> requests(schedule.size());
  for (std::size_t i = 0; i < schedule.size(); ++i)
    for (std::size_t k = 0; k < cfg.items; ++k) requests[i].push_back(pool[(i * cfg.items + k) % pool.size()]);

  std::optional<ScoreClient> client;
  try {
    client.emplace(cfg.host, cfg.port, schema);
  } catch (const SocketError& e) {
    return make_latency_report(std::move(latency), 0, cfg.qps, cfg.duration_s, std::string("connection failed: ") + e.what());
  }

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now() + std::chrono::milliseconds(5);
  auto ms_since = [&](Clock::time_point t) { return std::chrono::duration<double, std::milli>(t - t0).count(); };
  std::size_t rejected = 0;
  std::string note;
  std::mutex note_mu;
  auto set_note = [&](std::string s) {
    std::lock_guard lk(note_mu);
    if (note.empty()) note = std::move(s);
  };

  std::size_t sent = 0;
  std::promise<void> done;
  auto done_future = done.get_future();
  std::thread receiver([&] {
    try {
      for (std::size_t got = 0; got < schedule.size(); ++got) {
        const auto resp = client->receive();
        const double now = ms_since(Clock::now());
        if (resp.id >= schedule.size()) throw FormatError("unknown response id");
        if (resp.overloaded)
          ++rejected;
        else
          latency[resp.id] = now - schedule[resp.id];
      }
    } catch (const std::exception& e) {
      set_note(std::string("receive failed: ") + e.what());
    }
    done.set_value();
  });
  try {
    for (; sent < schedule.size(); ++sent) {
      std::this_thread::sleep_until(t0 + std::chrono::duration_cast<Clock::duration>(
                                             std::chrono::duration<double, std::milli>(schedule[sent])));
      client->send(sent, requests[sent]);
    }
  } catch (const std::exception& e) {
    set_note(std::string("send failed: ") + e.what());
    client->abort();
  }
  if (done_future.wait_for(std::chrono::duration<double>(cfg.drain_timeout_s)) == std::future_status::timeout) {
    set_note("timed out waiting for responses");
    client->abort();
  }
  receiver.join();
  return make_latency_report(std::move(latency), rejected, cfg.qps, cfg.duration_s, note);
}

}  // namespace cvr
