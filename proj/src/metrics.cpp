#include "leaf/metrics.hpp"

#include <stdexcept>
#include <string>

namespace leaf {

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted,
                        int num_classes) {
  if (truth.empty()) throw std::invalid_argument("compute_metrics: empty truth");
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("compute_metrics: size mismatch");
  }
  if (num_classes < 2) throw std::invalid_argument("compute_metrics: need >= 2 classes");

  Metrics m;
  m.num_classes = num_classes;
  m.confusion.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
  int correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw std::invalid_argument("compute_metrics: class index out of range");
    }
    ++m.confusion[static_cast<std::size_t>(t) * num_classes + p];
    if (t == p) ++correct;
  }
  m.overall_acc = static_cast<double>(correct) / static_cast<double>(truth.size());

  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    int row_total = 0;
    for (int p = 0; p < num_classes; ++p) row_total += m.at(c, p);
    if (row_total > 0) {
      recall_sum += static_cast<double>(m.at(c, c)) / row_total;
      ++present;
    }
  }
  m.balanced_acc = present > 0 ? recall_sum / present : 0.0;
  return m;
}

}  // namespace leaf
