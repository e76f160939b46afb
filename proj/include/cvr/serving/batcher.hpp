#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "cvr/errors.hpp"

namespace cvr {

// Times are milliseconds on whatever clock the caller drives the batcher with.
struct BatcherConfig {
  double batch_timeout_ms = 0.0;
  std::size_t max_batch_items = 1;
  std::size_t queue_capacity = 1024;  // requests

  void validate() const {
    if (!(batch_timeout_ms >= 0.0) || !std::isfinite(batch_timeout_ms))
      throw ConfigError("batcher: batch_timeout must be a finite value >= 0");
    if (max_batch_items < 1) throw ConfigError("batcher: max_batch_items must be >= 1");
    if (queue_capacity < 1) throw ConfigError("batcher: queue_capacity must be >= 1");
  }
};

// Dispatch rules, checked on every poll:
//   1. queued items >= max_batch_items: dispatch the longest FIFO prefix of
//      requests holding at most max_batch_items items (a single larger request
//      goes alone);
//   2. otherwise, once batch_timeout has elapsed since the oldest queued
//      request arrived, dispatch everything queued.
// Requests are never split or reordered. The batcher holds no clock; callers
// pass `now` explicitly, which makes real and simulated time interchangeable.
template <class T>
class DynamicBatcher {
 public:
  struct Entry {
    T payload;
    std::size_t items = 0;
    double arrival_ms = 0.0;
  };
  using Batch = std::vector<Entry>;

  explicit DynamicBatcher(BatcherConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const BatcherConfig& config() const { return cfg_; }

  // False when the queue is full; the caller answers with an overload response.
  bool offer(T payload, std::size_t items, double now_ms) {
    if (queue_.size() >= cfg_.queue_capacity) return false;
    if (!queue_.empty() && now_ms < queue_.back().arrival_ms) throw ContractError("batcher: time went backwards");
    queue_.push_back(Entry{std::move(payload), items, now_ms});
    queued_items_ += items;
    return true;
  }

  std::optional<Batch> poll(double now_ms) {
    if (queue_.empty()) return std::nullopt;
    if (queued_items_ >= cfg_.max_batch_items) {
      std::size_t take = 0, items = 0;
      while (take < queue_.size() && (take == 0 || items + queue_[take].items <= cfg_.max_batch_items))
        items += queue_[take++].items;
      return pop(take);
    }
    if (now_ms >= queue_.front().arrival_ms + cfg_.batch_timeout_ms) return pop(queue_.size());
    return std::nullopt;
  }

  // When rule 2 next fires, if anything is queued.
  std::optional<double> next_deadline() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.front().arrival_ms + cfg_.batch_timeout_ms;
  }

  std::size_t queued_requests() const { return queue_.size(); }
  std::size_t queued_items() const { return queued_items_; }

 private:
  Batch pop(std::size_t n) {
    Batch b;
    b.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      queued_items_ -= queue_.front().items;
      b.push_back(std::move(queue_.front()));
      queue_.pop_front();
    }
    return b;
  }

  BatcherConfig cfg_;
  std::deque<Entry> queue_;
  std::size_t queued_items_ = 0;
};

// Synthetic stage latency: fixed + per_item * n milliseconds.
struct StageCost {
  double fixed_ms = 0.0;
  double per_item_ms = 0.0;

  double delay_ms(std::size_t n) const { return fixed_ms + per_item_ms * static_cast<double>(n); }
  bool zero() const { return fixed_ms == 0.0 && per_item_ms == 0.0; }

  friend bool operator==(const StageCost&, const StageCost&) = default;
};

// Parses "fixed,per_item" in milliseconds.
inline StageCost parse_stage_cost(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("stage cost '" + s + "': expected fixed,per_item");
  StageCost c;
  try {
    std::size_t used = 0;
    c.fixed_ms = std::stod(s.substr(0, comma), &used);
    if (used != comma) throw ConfigError("stage cost '" + s + "': bad fixed term");
    const std::string rest = s.substr(comma + 1);
    c.per_item_ms = std::stod(rest, &used);
    if (used != rest.size()) throw ConfigError("stage cost '" + s + "': bad per-item term");
  } catch (const std::logic_error&) {
    throw ConfigError("stage cost '" + s + "': not a number");
  }
  if (!(c.fixed_ms >= 0.0) || !(c.per_item_ms >= 0.0)) throw ConfigError("stage cost '" + s + "': must be >= 0");
  return c;
}

// Client-side batching: sizes of the FIFO chunks one query's n items are sent in.
inline std::vector<std::size_t> client_chunks(std::size_t n, std::size_t max_per_request) {
  if (max_per_request < 1) throw ContractError("client_chunks: max_per_request must be >= 1");
  std::vector<std::size_t> sizes;
  for (std::size_t done = 0; done < n; done += max_per_request) sizes.push_back(std::min(max_per_request, n - done));
  return sizes;
}

}  // namespace cvr
