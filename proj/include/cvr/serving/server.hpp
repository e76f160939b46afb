#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <limits>
#include <list>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/features/encode.hpp"
#include "cvr/serving/batcher.hpp"
#include "cvr/serving/channel.hpp"
#include "cvr/serving/socket.hpp"
#include "cvr/serving/wire.hpp"
#include "cvr/training/model.hpp"

namespace cvr {

// Offline reference path: the same encode + forward the server runs, on one list of records.
inline std::vector<double> score_records(const Model& m, std::span<const FeatureRecord> records) {
  std::vector<EncodedItem> enc;
  enc.reserve(records.size());
  for (const auto& r : records) enc.push_back(encode_item(r, m.schema, m.stats));
  std::vector<const EncodedItem*> ptrs;
  for (const auto& e : enc) ptrs.push_back(&e);
  return score_items(m, ptrs);
}

struct ServerConfig {
  BatcherConfig batcher;
  StageCost stage_a;  // feature assembly
  StageCost stage_b;  // backbone + heads
  std::uint16_t port = 0;
  bool loopback_only = true;
  // Synthetic stage delays advance a virtual timeline instead of sleeping;
  // per-request virtual latencies are collected in ServerStats.
  bool sim_clock = false;
  std::size_t stage_queue = 4;  // batches buffered between pipeline stages
};

struct ServerStats {
  std::size_t requests = 0;
  std::size_t items = 0;
  std::size_t batches = 0;
  std::size_t overloads = 0;
  std::size_t errors = 0;
  std::vector<std::size_t> batch_items;     // per dispatched batch
  std::vector<double> virtual_latency_ms;  // sim_clock only
};

// Threads: one acceptor; a reader and a writer per connection; one batcher
// that owns the request queue; one executor per pipeline stage. Readers hand
// requests to the batcher under its lock; batches then move between stages
// through bounded channels. Each connection's writer emits responses strictly
// in request order.
class Server {
 public:
  Server(Model model, const FeatureSchema& serving_schema, ServerConfig cfg)
      : model_(std::move(model)), cfg_(cfg), batcher_(cfg.batcher), to_a_(cfg.stage_queue), to_b_(cfg.stage_queue) {
    if (serving_schema.fingerprint() != model_.schema.fingerprint())
      throw IncompatibleCheckpointError("refusing to serve: schema fingerprint " + hex64(serving_schema.fingerprint()) +
                                        " differs from checkpoint fingerprint " + hex64(model_.schema.fingerprint()));
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  void start() {
    listener_ = listen_tcp(cfg_.port, cfg_.loopback_only);
    port_ = local_port(listener_);
    t0_ = Clock::now();
    threads_.emplace_back([this] { batcher_loop(); });
    threads_.emplace_back([this] { stage_a_loop(); });
    threads_.emplace_back([this] { stage_b_loop(); });
    threads_.emplace_back([this] { accept_loop(); });
  }

  std::uint16_t port() const { return port_; }
  const Model& model() const { return model_; }

  // Stops accepting, flushes queued requests through the pipeline, then
  // closes every connection.
  void stop() {
    if (stopped_.exchange(true)) return;
    stopping_ = true;
    listener_.shutdown();
    {
      std::lock_guard lk(conn_mu_);
      for (auto& c : conns_) c->sock.shutdown();
    }
    {
      std::lock_guard lk(batch_mu_);
      batch_cv_.notify_all();
    }
    for (auto& t : threads_)
      if (t.joinable()) t.join();
    std::lock_guard lk(conn_mu_);
    for (auto& c : conns_) finish(*c);
    conns_.clear();
    listener_.close();
  }

  ServerStats stats() const {
    std::lock_guard lk(stats_mu_);
    return stats_;
  }

 private:
  using Clock = std::chrono::steady_clock;

  struct Slot {
    std::string frame;
    bool ready = false;
  };

  struct Connection {
    Socket sock;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::shared_ptr<Slot>> pending;
    bool reader_done = false;
    std::atomic<bool> finished{false};
    std::thread reader, writer;
  };

  struct Job {
    std::shared_ptr<Connection> conn;
    std::shared_ptr<Slot> slot;
    std::uint64_t id = 0;
    std::vector<FeatureRecord> records;
  };

  struct StageBatch {
    std::vector<DynamicBatcher<Job>::Entry> jobs;
    double dispatch_ms = 0.0;
    double a_end_ms = 0.0;  // virtual, sim_clock only
    std::size_t items = 0;
    std::vector<EncodedItem> encoded;
  };

  double now_ms() const { return std::chrono::duration<double, std::milli>(Clock::now() - t0_).count(); }

  static void complete(Connection& c, Slot& s, std::string frame) {
    std::lock_guard lk(c.mu);
    s.frame = std::move(frame);
    s.ready = true;
    c.cv.notify_all();
  }

  void accept_loop() {
    while (!stopping_) {
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        break;
      }
      set_nodelay(fd);
      auto c = std::make_shared<Connection>();
      c->sock = Socket(fd);
      std::lock_guard lk(conn_mu_);
      reap_finished();
      if (stopping_) {
        c->sock.shutdown();
        continue;
      }
      c->reader = std::thread([this, c] { reader_loop(c); });
      c->writer = std::thread([this, c] { writer_loop(*c); });
      conns_.push_back(std::move(c));
    }
  }

  static void finish(Connection& c) {
    if (c.reader.joinable()) c.reader.join();
    if (c.writer.joinable()) c.writer.join();
  }

  void reap_finished() {
    for (auto it = conns_.begin(); it != conns_.end();) {
      if ((*it)->finished) {
        finish(**it);
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void reader_loop(const std::shared_ptr<Connection>& c) {
    try {
      while (auto payload = read_frame(c->sock.fd())) {
        ScoreRequest req = decode_request(*payload, model_.schema);
        auto slot = std::make_shared<Slot>();
        {
          std::lock_guard lk(c->mu);
          c->pending.push_back(slot);
        }
        const std::size_t n = req.records.size();
        {
          std::lock_guard lk(stats_mu_);
          ++stats_.requests;
          stats_.items += n;
        }
        if (n == 0) {
          complete(*c, *slot, encode_response(ScoreResponse{req.id, false, {}}));
          continue;
        }
        bool accepted;
        {
          std::lock_guard lk(batch_mu_);
          accepted = !stopping_ && batcher_.offer(Job{c, slot, req.id, std::move(req.records)}, n, now_ms());
          if (accepted) batch_cv_.notify_all();
        }
        if (!accepted) {
          {
            std::lock_guard lk(stats_mu_);
            ++stats_.overloads;
          }
          complete(*c, *slot, encode_response(ScoreResponse{req.id, true, {}}));
        }
      }
    } catch (const std::exception&) {
      // Malformed frame or socket failure: stop reading, still answer what was accepted.
    }
    std::lock_guard lk(c->mu);
    c->reader_done = true;
    c->cv.notify_all();
  }

  void writer_loop(Connection& c) {
    bool broken = false;
    for (;;) {
      std::shared_ptr<Slot> s;
      {
        std::unique_lock lk(c.mu);
        c.cv.wait(lk, [&] { return (!c.pending.empty() && c.pending.front()->ready) || (c.reader_done && c.pending.empty()); });
        if (c.pending.empty()) break;
        s = std::move(c.pending.front());
        c.pending.pop_front();
      }
      if (broken) continue;
      try {
        write_all(c.sock.fd(), s->frame);
      } catch (const SocketError&) {
        broken = true;
      }
    }
    c.sock.shutdown();
    c.finished = true;
  }

  void batcher_loop() {
    std::unique_lock lk(batch_mu_);
    for (;;) {
      const bool draining = stopping_;
      if (draining && batcher_.queued_requests() == 0) break;
      const double now = draining ? std::numeric_limits<double>::infinity() : now_ms();
      if (auto b = batcher_.poll(now)) {
        StageBatch sb;
        sb.dispatch_ms = now_ms();
        for (const auto& e : *b) sb.items += e.items;
        sb.jobs = std::move(*b);
        {
          std::lock_guard slk(stats_mu_);
          ++stats_.batches;
          stats_.batch_items.push_back(sb.items);
        }
        lk.unlock();
        to_a_.push(std::move(sb));
        lk.lock();
        continue;
      }
      if (auto dl = batcher_.next_deadline()) {
        const auto wake = t0_ + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double, std::milli>(*dl));
        batch_cv_.wait_until(lk, wake);
      } else {
        batch_cv_.wait(lk, [&] { return stopping_ || batcher_.queued_requests() > 0; });
      }
    }
    to_a_.close();
  }

  void delay(const StageCost& cost, std::size_t n) const {
    if (cfg_.sim_clock || cost.zero()) return;
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(cost.delay_ms(n)));
  }

  void stage_a_loop() {
    double free_at = 0.0;
    while (auto b = to_a_.pop()) {
      try {
        b->encoded.reserve(b->items);
        for (const auto& e : b->jobs)
          for (const auto& r : e.payload.records) b->encoded.push_back(encode_item(r, model_.schema, model_.stats));
      } catch (const std::exception&) {
        b->encoded.clear();  // stage B answers the batch with an error response
      }
      delay(cfg_.stage_a, b->items);
      free_at = std::max(b->dispatch_ms, free_at) + cfg_.stage_a.delay_ms(b->items);
      b->a_end_ms = free_at;
      if (!to_b_.push(std::move(*b))) break;
    }
    to_b_.close();
  }

  void stage_b_loop() {
    double free_at = 0.0;
    while (auto b = to_b_.pop()) {
      std::vector<double> scores;
      bool failed = b->encoded.size() != b->items;
      if (!failed) {
        try {
          std::vector<const EncodedItem*> ptrs;
          ptrs.reserve(b->encoded.size());
          for (const auto& e : b->encoded) ptrs.push_back(&e);
          scores = score_items(model_, ptrs);
        } catch (const std::exception&) {
          failed = true;
        }
      }
      delay(cfg_.stage_b, b->items);
      free_at = std::max(b->a_end_ms, free_at) + cfg_.stage_b.delay_ms(b->items);
      std::size_t k = 0;
      for (auto& e : b->jobs) {
        ScoreResponse resp{e.payload.id, failed, {}};
        if (!failed) {
          resp.scores.reserve(e.items);
          for (std::size_t i = 0; i < e.items; ++i) resp.scores.push_back(static_cast<float>(scores[k++]));
        }
        complete(*e.payload.conn, *e.payload.slot, encode_response(resp));
      }
      std::lock_guard lk(stats_mu_);
      if (failed) ++stats_.errors;
      if (cfg_.sim_clock)
        for (const auto& e : b->jobs) stats_.virtual_latency_ms.push_back(free_at - e.arrival_ms);
    }
  }

  Model model_;
  ServerConfig cfg_;
  Socket listener_;
  std::uint16_t port_ = 0;
  Clock::time_point t0_;
  std::atomic<bool> stopping_{false}, stopped_{false};

  std::mutex batch_mu_;
  std::condition_variable batch_cv_;
  DynamicBatcher<Job> batcher_;
  BoundedChannel<StageBatch> to_a_, to_b_;

  std::mutex conn_mu_;
  std::list<std::shared_ptr<Connection>> conns_;
  std::vector<std::thread> threads_;

  mutable std::mutex stats_mu_;
  ServerStats stats_;
};

}  // namespace cvr
