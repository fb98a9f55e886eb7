#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "leaf/nn.hpp"
#include "leaf/rng.hpp"
#include "leaf/tensor.hpp"

namespace leaf {

/// Structural variants of an expert. All of them map width -> width so a
/// bank can be inserted anywhere without changing shapes.
///   linear:     one affine map
///   bottleneck: affine down to width/ratio, relu, affine back up
///   residual:   bottleneck plus an identity skip
enum class ExpertKind { linear, bottleneck, residual };

ExpertKind expert_kind_from_string(const std::string& s);
std::string to_string(ExpertKind kind);

struct Expert {
  ExpertKind kind = ExpertKind::linear;
  LinearLayer first;
  LinearLayer second;  // unused for the linear kind

  Tensor forward(const Tensor& x) const;
};

/// n experts of a single kind plus the gate weight matrix (width x n).
/// Semantic-level and instance-level banks are separate instances with
/// their own parameters.
struct ExpertBank {
  std::vector<Expert> experts;
  Tensor gate_weight;
  int top_k = 1;

  static ExpertBank init(ExpertKind kind, int width, int num_experts, int top_k,
                         int bottleneck_ratio, Rng& rng);

  int width() const { return gate_weight.rows(); }
  int num_experts() const { return static_cast<int>(experts.size()); }
};

/// Per-row gating weights: softmax over the top-K softplus gate scores.
/// Rows are nonnegative, sum to 1, and have exactly n-K zeros.
struct GateDecision {
  Tensor weights;                      // batch x n
  std::vector<std::uint8_t> active;    // batch x n survivor mask
};

GateDecision gate(const Tensor& x, const ExpertBank& bank);

/// Weighted sum of the expert outputs under the gate decision; output shape
/// equals the input shape.
Tensor fuse(const Tensor& x, const ExpertBank& bank);

}  // namespace leaf
