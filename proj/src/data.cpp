#include "leaf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace leaf {

std::vector<int> SyntheticSpec::default_counts(int num_classes, int total, double decay) {
  double weight_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) weight_sum += std::pow(decay, c);
  const double largest = total / weight_sum;
  std::vector<int> counts(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    counts[static_cast<std::size_t>(c)] =
        std::max(1, static_cast<int>(std::lround(largest * std::pow(decay, c))));
  }
  return counts;
}

std::vector<int> SyntheticSpec::resolved_counts() const {
  return per_class_counts.empty() ? default_counts(num_classes) : per_class_counts;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("SyntheticSpec: need at least 2 classes");
  if (dim < 1) throw std::invalid_argument("SyntheticSpec: dim must be >= 1");
  if (!(cluster_separation > 0.0)) {
    throw std::invalid_argument("SyntheticSpec: cluster_separation must be positive");
  }
  if (!(noise_sigma >= 0.0)) {
    throw std::invalid_argument("SyntheticSpec: noise_sigma must be >= 0");
  }
  const auto counts = resolved_counts();
  if (static_cast<int>(counts.size()) != num_classes) {
    throw std::invalid_argument("SyntheticSpec: per_class_counts size != num_classes");
  }
  for (int c : counts) {
    if (c < 1) throw std::invalid_argument("SyntheticSpec: every class needs >= 1 sample");
  }
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto counts = spec.resolved_counts();

  // class centers on the sphere of radius cluster_separation
  std::vector<std::vector<double>> centers;
  for (int c = 0; c < spec.num_classes; ++c) {
    std::vector<double> v(static_cast<std::size_t>(spec.dim));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& e : v) {
        e = rng.gaussian();
        norm += e * e;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (auto& e : v) e *= spec.cluster_separation / norm;
    centers.push_back(std::move(v));
  }

  Dataset ds;
  ds.dim = spec.dim;
  ds.num_classes = spec.num_classes;
  const int total = std::accumulate(counts.begin(), counts.end(), 0);
  ds.x.reserve(static_cast<std::size_t>(total) * spec.dim);
  ds.y.reserve(static_cast<std::size_t>(total));
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      for (int d = 0; d < spec.dim; ++d) {
        ds.x.push_back(centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] +
                       spec.noise_sigma * rng.gaussian());
      }
      ds.y.push_back(c);
    }
  }
  return ds;
}

namespace {

SampleSet gather(const Dataset& ds, const std::vector<int>& idx, bool with_labels) {
  SampleSet s;
  s.dim = ds.dim;
  s.x.reserve(idx.size() * static_cast<std::size_t>(ds.dim));
  if (with_labels) s.y.reserve(idx.size());
  for (int i : idx) {
    const auto r = ds.row(i);
    s.x.insert(s.x.end(), r.begin(), r.end());
    if (with_labels) s.y.push_back(ds.y[static_cast<std::size_t>(i)]);
  }
  return s;
}

}  // namespace

SslSplit split_dataset(const Dataset& ds, int n_labeled, std::uint64_t seed) {
  const int n = ds.size();
  const int k = ds.num_classes;
  if (k < 2) throw std::invalid_argument("split_dataset: dataset needs >= 2 classes");
  const int n_test = static_cast<int>(std::lround(0.2 * n));
  if (n_labeled < k) {
    throw std::invalid_argument("split_dataset: n_labeled must be >= num_classes");
  }
  if (n_labeled > n - n_test) {
    throw std::invalid_argument("split_dataset: n_labeled " + std::to_string(n_labeled) +
                                " exceeds available " + std::to_string(n - n_test));
  }

  Rng rng(seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<int> test_idx(order.begin(), order.begin() + n_test);
  std::vector<int> pool(order.begin() + n_test, order.end());
  std::sort(test_idx.begin(), test_idx.end());

  // per-class pools, each shuffled independently
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(k));
  for (int i : pool) by_class[static_cast<std::size_t>(ds.y[static_cast<std::size_t>(i)])].push_back(i);
  for (auto& v : by_class) {
    std::sort(v.begin(), v.end());
    rng.shuffle(v);
  }

  // quota: floor(n_labeled/k) each, remainder to the largest classes; a
  // class that cannot fill its quota spills the shortfall onto the classes
  // with capacity left, so the split stays stratified when possible
  std::vector<int> quota(static_cast<std::size_t>(k), n_labeled / k);
  int remainder = n_labeled % k;
  std::vector<int> class_order(static_cast<std::size_t>(k));
  std::iota(class_order.begin(), class_order.end(), 0);
  std::stable_sort(class_order.begin(), class_order.end(), [&](int a, int b) {
    return by_class[static_cast<std::size_t>(a)].size() > by_class[static_cast<std::size_t>(b)].size();
  });
  for (int i = 0; i < remainder; ++i) ++quota[static_cast<std::size_t>(class_order[static_cast<std::size_t>(i)])];
  int shortfall = 0;
  for (int c = 0; c < k; ++c) {
    const int avail = static_cast<int>(by_class[static_cast<std::size_t>(c)].size());
    if (quota[static_cast<std::size_t>(c)] > avail) {
      shortfall += quota[static_cast<std::size_t>(c)] - avail;
      quota[static_cast<std::size_t>(c)] = avail;
    }
  }
  while (shortfall > 0) {
    bool placed = false;
    for (int i = 0; i < k && shortfall > 0; ++i) {
      const int c = class_order[static_cast<std::size_t>(i)];
      if (quota[static_cast<std::size_t>(c)] < static_cast<int>(by_class[static_cast<std::size_t>(c)].size())) {
        ++quota[static_cast<std::size_t>(c)];
        --shortfall;
        placed = true;
      }
    }
    if (!placed) {
      throw std::invalid_argument("split_dataset: pool cannot supply the labeled quota");
    }
  }

  std::vector<int> labeled_idx;
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (int c = 0; c < k; ++c) {
    const auto& members = by_class[static_cast<std::size_t>(c)];
    for (int i = 0; i < quota[static_cast<std::size_t>(c)]; ++i) {
      labeled_idx.push_back(members[static_cast<std::size_t>(i)]);
      taken[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])] = 1;
    }
  }
  std::sort(labeled_idx.begin(), labeled_idx.end());

  std::vector<int> unlabeled_idx;
  for (int i : pool) {
    if (!taken[static_cast<std::size_t>(i)]) unlabeled_idx.push_back(i);
  }
  std::sort(unlabeled_idx.begin(), unlabeled_idx.end());

  SslSplit split;
  split.num_classes = k;
  split.labeled = gather(ds, labeled_idx, true);
  split.unlabeled = gather(ds, unlabeled_idx, false);
  split.test = gather(ds, test_idx, true);
  return split;
}

void augment_row(std::span<const double> in, std::span<double> out, AugStrength strength,
                 const AugmentParams& params, Rng& rng) {
  const std::size_t dim = in.size();
  if (out.size() != dim) throw std::invalid_argument("augment_row: size mismatch");
  const double sigma = strength == AugStrength::weak ? params.weak_sigma : params.strong_sigma;
  for (std::size_t d = 0; d < dim; ++d) out[d] = in[d] + sigma * rng.gaussian();
  if (strength == AugStrength::strong) {
    const int n_mask = static_cast<int>(params.mask_fraction * static_cast<double>(dim));
    // floyd-style distinct sample of n_mask coordinates
    std::vector<int> coords(dim);
    std::iota(coords.begin(), coords.end(), 0);
    for (int i = 0; i < n_mask; ++i) {
      const int j = i + rng.uniform_int(static_cast<int>(dim) - i);
      std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
      out[static_cast<std::size_t>(coords[static_cast<std::size_t>(i)])] = 0.0;
    }
  }
}

void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("save_csv: cannot open " + path);
  char buf[40];
  for (int i = 0; i < ds.size(); ++i) {
    const auto r = ds.row(i);
    for (int d = 0; d < ds.dim; ++d) {
      std::snprintf(buf, sizeof(buf), "%.17g", r[static_cast<std::size_t>(d)]);
      os << buf << ',';
    }
    os << ds.y[static_cast<std::size_t>(i)] << '\n';
  }
  if (!os) throw std::runtime_error("save_csv: write failed for " + path);
}

Dataset load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_csv: cannot open " + path);
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        fields.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: bad value '" + cell + "' at line " +
                                 std::to_string(line_no));
      }
    }
    if (fields.size() < 2) {
      throw std::runtime_error("load_csv: need at least one feature and a label at line " +
                               std::to_string(line_no));
    }
    const int dim = static_cast<int>(fields.size()) - 1;
    if (ds.dim == 0) {
      ds.dim = dim;
    } else if (ds.dim != dim) {
      throw std::runtime_error("load_csv: inconsistent column count at line " +
                               std::to_string(line_no));
    }
    ds.x.insert(ds.x.end(), fields.begin(), fields.end() - 1);
    const int label = static_cast<int>(std::lround(fields.back()));
    if (label < -1) throw std::runtime_error("load_csv: bad label at line " + std::to_string(line_no));
    ds.y.push_back(label);
    ds.num_classes = std::max(ds.num_classes, label + 1);
  }
  return ds;
}

}  // namespace leaf
