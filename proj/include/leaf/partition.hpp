#pragma once

#include <span>
#include <vector>

#include "leaf/tensor.hpp"

namespace leaf {

/// Split of k class scores into a positive set (the top classes whose
/// cumulative probability first reaches the threshold) and a negative set
/// (everything else). A discrete decision: no gradient flows through it.
struct Partition {
  std::vector<int> order;  // class indices sorted by descending probability
  int m = 0;               // number of positive classes, in [1, k-1]

  int num_classes() const { return static_cast<int>(order.size()); }
  std::span<const int> positive() const { return {order.data(), static_cast<std::size_t>(m)}; }
  std::span<const int> negative() const {
    return {order.data() + m, static_cast<std::size_t>(num_classes() - m)};
  }
};

struct ConsistencyParams {
  double threshold = 0.9;  // cumulative-probability cut
  double margin = 0.0;     // separation margin between the two sets
};

/// probs must be a k-simplex vector (k >= 2, nonnegative, sum within 1e-6
/// of 1). m is the smallest count whose sorted cumulative sum reaches the
/// threshold, clamped to [1, k-1]; probability ties break toward the lower
/// class index.
Partition make_partition(std::span<const double> probs, double threshold);

/// Smooth consistency loss, averaged over rows:
///   log(1 + e^margin * sum_{i in pos} e^{-y_i} * sum_{j in neg} e^{y_j})
/// evaluated with log-sum-exp stabilization of both inner sums. parts[r]
/// pairs with row r of scores and must come from the opposite view.
Tensor ambiguous_consistency_mean(const Tensor& scores, const std::vector<Partition>& parts,
                                  double margin = 0.0);

/// Exact non-smooth reference the smooth loss upper-bounds:
///   relu(max(negatives) + margin - min(positives)).
/// Test oracle only; not differentiable.
double hinge_oracle(std::span<const double> scores, const Partition& part, double margin = 0.0);

}  // namespace leaf
