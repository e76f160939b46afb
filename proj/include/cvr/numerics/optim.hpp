#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/numerics/tensor.hpp"

namespace cvr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments for one ordered list of parameters.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update over params[i] with grads[i].
inline void adam_step(std::vector<Tensor*>& params, const std::vector<const std::vector<double>*>& grads,
                      AdamState& state, double lr) {
  if (lr < 0.0) throw ContractError("adam_step: negative learning rate");
  if (params.size() != grads.size())
    throw ContractError("adam_step: " + std::to_string(params.size()) + " params but " +
                        std::to_string(grads.size()) + " gradients");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->numel(), 0.0);
      state.v[i].assign(params[i]->numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: state tracks a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->size() != params[i]->numel() || state.m[i].size() != params[i]->numel())
      throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i) + " " +
                          shape_str(params[i]->shape));
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data;
    const auto& g = *grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

// Linear warm-up to lr_peak, then cosine decay to lr_final at total_steps.
struct LrSchedule {
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 1;
  double lr_peak = 1e-3;
  double lr_final = 0.0;

  void validate() const {
    if (warmup_steps > total_steps) throw ContractError("LrSchedule: warmup_steps exceeds total_steps");
    if (lr_peak < 0.0 || lr_final < 0.0) throw ContractError("LrSchedule: learning rates must be non-negative");
  }
};

inline double lr_at(const LrSchedule& s, std::uint64_t step) {
  s.validate();
  if (step > s.total_steps)
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total_steps " + std::to_string(s.total_steps));
  if (step < s.warmup_steps)
    return s.lr_peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const std::uint64_t decay = s.total_steps - s.warmup_steps;
  if (decay == 0) return s.lr_peak;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(decay);
  return s.lr_final + 0.5 * (s.lr_peak - s.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace cvr
