#include "leaf/partition.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

namespace leaf {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sum over idx of e^{sign * y[idx]}), max-shifted
double logsumexp_subset(std::span<const double> y, std::span<const int> idx, double sign) {
  double m = sign * y[static_cast<std::size_t>(idx[0])];
  for (int i : idx) m = std::max(m, sign * y[static_cast<std::size_t>(i)]);
  double s = 0.0;
  for (int i : idx) s += std::exp(sign * y[static_cast<std::size_t>(i)] - m);
  return m + std::log(s);
}

}  // namespace

Partition make_partition(std::span<const double> probs, double threshold) {
  const int k = static_cast<int>(probs.size());
  if (k < 2) throw std::invalid_argument("make_partition: need at least 2 classes");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("make_partition: threshold must lie in (0, 1)");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("make_partition: probabilities must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "make_partition: probabilities sum to " << sum << ", not 1";
    throw std::invalid_argument(os.str());
  }

  Partition part;
  part.order.resize(static_cast<std::size_t>(k));
  std::iota(part.order.begin(), part.order.end(), 0);
  // stable sort: ties keep the lower class index first
  std::stable_sort(part.order.begin(), part.order.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });

  double cum = 0.0;
  int m = k;  // falls through to the clamp if the threshold is never reached
  for (int i = 0; i < k; ++i) {
    cum += probs[static_cast<std::size_t>(part.order[i])];
    if (cum >= threshold) {
      m = i + 1;
      break;
    }
  }
  part.m = std::clamp(m, 1, k - 1);
  return part;
}

Tensor ambiguous_consistency_mean(const Tensor& scores, const std::vector<Partition>& parts,
                                  double margin) {
  const int rows = scores.rows(), cols = scores.cols();
  if (rows < 1 || cols < 2) {
    throw std::invalid_argument("ambiguous_consistency_mean: scores must be batch x k, k >= 2");
  }
  if (static_cast<int>(parts.size()) != rows) {
    throw std::invalid_argument("ambiguous_consistency_mean: one partition per row required");
  }
  if (!(margin >= 0.0)) {
    throw std::invalid_argument("ambiguous_consistency_mean: margin must be >= 0");
  }
  for (const auto& p : parts) {
    if (p.num_classes() != cols || p.m < 1 || p.m > cols - 1) {
      throw std::logic_error("ambiguous_consistency_mean: partition does not match scores");
    }
  }

  Tensor out(1, 1);
  const auto y = scores.values();
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    std::span<const double> row{y.data() + static_cast<std::size_t>(r) * cols,
                                static_cast<std::size_t>(cols)};
    const double z =
        logsumexp_subset(row, parts[r].negative(), 1.0) +
        logsumexp_subset(row, parts[r].positive(), -1.0) + margin;
    // softplus(z) = log(1 + e^z), stabilized
    total += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  }
  out.values()[0] = total / rows;
  check_finite(out, "ambiguous_consistency_mean");

  if (Tape::active() != nullptr && scores.requires_grad()) {
    Tensor px = scores, po = out;
    auto pp = std::make_shared<std::vector<Partition>>(parts);
    Tape::active()->record(out, {scores}, [px, po, pp, margin]() mutable {
      const double g = po.grad()[0] / px.rows();
      const auto y = px.values();
      auto gy = px.grad();
      const int rows = px.rows(), cols = px.cols();
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        std::span<const double> row{y.data() + off, static_cast<std::size_t>(cols)};
        const auto& part = (*pp)[r];
        const double lse_neg = logsumexp_subset(row, part.negative(), 1.0);
        const double lse_pos = logsumexp_subset(row, part.positive(), -1.0);
        const double s = sigmoid(lse_neg + lse_pos + margin);
        // d z / d y_j = softmax over the negatives; d z / d y_i = -softmax
        // over the negated positives
        for (int j : part.negative()) {
          gy[off + j] += g * s * std::exp(row[static_cast<std::size_t>(j)] - lse_neg);
        }
        for (int i : part.positive()) {
          gy[off + i] -= g * s * std::exp(-row[static_cast<std::size_t>(i)] - lse_pos);
        }
      }
    });
  }
  return out;
}

double hinge_oracle(std::span<const double> scores, const Partition& part, double margin) {
  if (static_cast<int>(scores.size()) != part.num_classes()) {
    throw std::invalid_argument("hinge_oracle: score count does not match partition");
  }
  double max_neg = scores[static_cast<std::size_t>(part.negative()[0])];
  for (int j : part.negative()) max_neg = std::max(max_neg, scores[static_cast<std::size_t>(j)]);
  double min_pos = scores[static_cast<std::size_t>(part.positive()[0])];
  for (int i : part.positive()) min_pos = std::min(min_pos, scores[static_cast<std::size_t>(i)]);
  return std::max(max_neg + margin - min_pos, 0.0);
}

}  // namespace leaf
