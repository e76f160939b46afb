#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/numerics/graph.hpp"

namespace cvr {

// -sum_i y_i * log softmax(s)_i with a max-subtracted log-sum-exp. A group
// without positives contributes 0.
inline double listwise_loss(std::span<const double> logits, std::span<const double> labels) {
  if (logits.empty()) throw ContractError("listwise_loss: empty group");
  if (logits.size() != labels.size()) throw DimensionError("listwise_loss: logits/labels length mismatch");
  double ysum = 0.0;
  for (double y : labels) ysum += y;
  if (ysum == 0.0) return 0.0;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double s : logits) z += std::exp(s - mx);
  const double lse = mx + std::log(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (labels[i] != 0.0) loss -= labels[i] * (logits[i] - lse);
  return loss;
}

inline double total_loss(std::span<const double> per_task) {
  return std::accumulate(per_task.begin(), per_task.end(), 0.0);
}

// Graph op: mean over groups of listwise_loss. `offsets` has one entry per
// group plus a final end offset into the rows of `logits` ([N x 1] or [N]).
inline Var listwise_loss(Var logits, std::vector<std::size_t> offsets, std::vector<double> labels) {
  Graph& g = *logits.graph;
  const auto& s = g.value(logits);
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != s.size() || labels.size() != s.size())
    throw DimensionError("listwise_loss: offsets/labels do not cover " + shape_str(g.shape(logits)));
  const std::size_t groups = offsets.size() - 1;
  const double inv = 1.0 / static_cast<double>(groups);
  double total = 0.0;
  for (std::size_t k = 0; k < groups; ++k) {
    if (offsets[k + 1] <= offsets[k]) throw ContractError("listwise_loss: empty group in batch");
    const std::size_t b = offsets[k], n = offsets[k + 1] - offsets[k];
    total += listwise_loss(std::span(s).subspan(b, n), std::span<const double>(labels).subspan(b, n));
  }
  return g.emit("listwise_loss", {1}, {total * inv}, {logits.id},
                [offsets = std::move(offsets), labels = std::move(labels), inv](Graph& gr, std::size_t self) {
                  const auto& node = gr.node(self);
                  const double dy = node.grad[0] * inv;
                  const auto& sv = gr.value(node.inputs[0]);
                  auto& gx = gr.grad_buffer(node.inputs[0]);
                  for (std::size_t k = 0; k + 1 < offsets.size(); ++k) {
                    const std::size_t b = offsets[k], e = offsets[k + 1];
                    double ysum = 0.0;
                    for (std::size_t i = b; i < e; ++i) ysum += labels[i];
                    if (ysum == 0.0) continue;
                    const double mx = *std::max_element(sv.begin() + static_cast<std::ptrdiff_t>(b),
                                                        sv.begin() + static_cast<std::ptrdiff_t>(e));
                    double z = 0.0;
                    for (std::size_t i = b; i < e; ++i) z += std::exp(sv[i] - mx);
                    for (std::size_t i = b; i < e; ++i)
                      gx[i] += dy * (std::exp(sv[i] - mx) / z * ysum - labels[i]);
                  }
                });
}

}  // namespace cvr
