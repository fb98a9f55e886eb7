#pragma once

#include <span>
#include <vector>

namespace leaf {

/// Classification metrics with a k x k confusion matrix (row = true class,
/// column = predicted). Balanced accuracy is the unweighted mean of
/// per-class recalls over classes that appear in the truth.
struct Metrics {
  double overall_acc = 0.0;
  double balanced_acc = 0.0;
  int num_classes = 0;
  std::vector<int> confusion;  // k * k

  int at(int truth, int predicted) const { return confusion[truth * num_classes + predicted]; }
};

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted,
                        int num_classes);

}  // namespace leaf
