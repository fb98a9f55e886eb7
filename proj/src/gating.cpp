#include "leaf/gating.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace leaf {

ExpertKind expert_kind_from_string(const std::string& s) {
  if (s == "linear") return ExpertKind::linear;
  if (s == "bottleneck") return ExpertKind::bottleneck;
  if (s == "residual") return ExpertKind::residual;
  throw std::invalid_argument("unknown expert kind '" + s + "'");
}

std::string to_string(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::linear: return "linear";
    case ExpertKind::bottleneck: return "bottleneck";
    default: return "residual";
  }
}

Tensor Expert::forward(const Tensor& x) const {
  switch (kind) {
    case ExpertKind::linear:
      return first.forward(x);
    case ExpertKind::bottleneck:
      return second.forward(relu(first.forward(x)));
    default: {  // residual: bottleneck plus identity skip
      Tensor y = second.forward(relu(first.forward(x)));
      return add(y, x);
    }
  }
}

ExpertBank ExpertBank::init(ExpertKind kind, int width, int num_experts, int top_k,
                            int bottleneck_ratio, Rng& rng) {
  if (width < 1) throw std::invalid_argument("ExpertBank::init: width must be >= 1");
  if (num_experts < 1) throw std::invalid_argument("ExpertBank::init: need at least one expert");
  if (top_k < 1 || top_k > num_experts) {
    throw std::invalid_argument("ExpertBank::init: top_k=" + std::to_string(top_k) +
                                " outside [1, " + std::to_string(num_experts) + "]");
  }
  if (bottleneck_ratio < 1) {
    throw std::invalid_argument("ExpertBank::init: bottleneck_ratio must be >= 1");
  }

  ExpertBank bank;
  bank.top_k = top_k;
  const int hidden = std::max(1, width / bottleneck_ratio);
  for (int j = 0; j < num_experts; ++j) {
    Expert e;
    e.kind = kind;
    if (kind == ExpertKind::linear) {
      e.first = LinearLayer::init(width, width, rng);
    } else {
      e.first = LinearLayer::init(width, hidden, rng);
      e.second = LinearLayer::init(hidden, width, rng);
      if (kind == ExpertKind::residual) {
        // start every residual expert as the exact identity map; the skip
        // path carries the signal until the bottleneck earns weight
        for (auto& v : e.second.weight.values()) v = 0.0;
      }
    }
    bank.experts.push_back(std::move(e));
  }
  bank.gate_weight = Tensor(width, num_experts);
  const double bound = std::sqrt(6.0 / (width + num_experts));
  for (auto& w : bank.gate_weight.values()) w = rng.uniform(-bound, bound);
  bank.gate_weight.set_requires_grad(true);
  return bank;
}

GateDecision gate(const Tensor& x, const ExpertBank& bank) {
  if (x.cols() != bank.width()) {
    throw std::invalid_argument("gate: input width " + std::to_string(x.cols()) +
                                " != bank width " + std::to_string(bank.width()));
  }
  Tensor scores = softplus(matmul(x, bank.gate_weight));
  Tensor weights = softmax_rows(topk_mask(scores, bank.top_k));

  GateDecision d;
  d.weights = weights;
  d.active.resize(static_cast<std::size_t>(weights.size()));
  for (int i = 0; i < weights.size(); ++i) d.active[i] = weights.values()[i] > 0.0 ? 1 : 0;
  return d;
}

Tensor fuse(const Tensor& x, const ExpertBank& bank) {
  GateDecision d = gate(x, bank);
  Tensor out;
  for (int j = 0; j < bank.num_experts(); ++j) {
    Tensor wj = slice_cols(d.weights, j, j + 1);  // batch x 1 column broadcast
    Tensor term = mul_elementwise(wj, bank.experts[j].forward(x));
    out = j == 0 ? term : add(out, term);
  }
  return out;
}

}  // namespace leaf
