#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/numerics/graph.hpp"
#include "cvr/numerics/rng.hpp"
#include "cvr/numerics/tensor.hpp"

namespace cvr {

// Named parameter tensors, iterated in name order. Names follow
// `<family>/<layer>/<role>`; they are the checkpoint contract.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void set(const std::string& name, Tensor t) {
    t.validate();
    tensors_[name] = std::move(t);
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  void erase(const std::string& name) { tensors_.erase(name); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [k, _] : tensors_) out.push_back(k);
    return out;
  }
  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t total_elements() const noexcept {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
  }
  const Map& tensors() const noexcept { return tensors_; }
  Map& tensors() noexcept { return tensors_; }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.tensors_.size() != b.tensors_.size()) return false;
    for (auto ia = a.tensors_.begin(), ib = b.tensors_.begin(); ia != a.tensors_.end(); ++ia, ++ib)
      if (ia->first != ib->first || ia->second.shape != ib->second.shape || ia->second.data != ib->second.data)
        return false;
    return true;
  }

 private:
  Map tensors_;
};

// Glorot-uniform weight from a substream keyed by the parameter name, so a
// parameter's initial value never depends on which other parameters exist.
inline Tensor init_weight(const std::string& name, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  SplitMix64 rng = SplitMix64(seed).derive(name);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros({fan_in, fan_out});
  for (double& x : t.data) x = rng.uniform(-bound, bound);
  return t;
}

inline void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                       std::uint64_t seed) {
  store.set(prefix + "/W", init_weight(prefix + "/W", in, out, seed));
  store.set(prefix + "/b", Tensor::zeros({out}));
}

// Lazily turns stored tensors into graph leaves, once per name.
class ParamBinder {
 public:
  ParamBinder(Graph& g, const ParamStore& store, bool trainable) : graph_(g), store_(store), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = graph_.leaf(store_.at(name), trainable_);
    bound_.emplace(name, v);
    return v;
  }

  Graph& graph() noexcept { return graph_; }
  const ParamStore& store() const noexcept { return store_; }
  const std::map<std::string, Var>& bound() const noexcept { return bound_; }

 private:
  Graph& graph_;
  const ParamStore& store_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

inline Var linear(ParamBinder& p, const std::string& prefix, Var x) {
  return add_bias(matmul(x, p(prefix + "/W")), p(prefix + "/b"));
}

}  // namespace cvr
