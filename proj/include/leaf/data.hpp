#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "leaf/rng.hpp"

namespace leaf {

/// Gaussian-cluster synthetic dataset: class centers sit on a sphere of
/// radius cluster_separation, samples scatter around them with isotropic
/// noise_sigma. per_class_counts may be imbalanced.
struct SyntheticSpec {
  int num_classes = 7;
  int dim = 32;
  std::vector<int> per_class_counts;  // empty = default imbalanced profile
  double cluster_separation = 4.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;  // 0 = derive from the run seed

  /// Geometric decay from the largest class, scaled to roughly `total`.
  static std::vector<int> default_counts(int num_classes, int total = 7000, double decay = 0.7);
  std::vector<int> resolved_counts() const;
  void validate() const;
};

struct SampleSet {
  int dim = 0;
  std::vector<double> x;  // size() * dim, row-major
  std::vector<int> y;     // empty for unlabeled sets

  int size() const { return dim == 0 ? 0 : static_cast<int>(x.size()) / dim; }
  std::span<const double> row(int i) const {
    return {x.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

struct Dataset {
  int dim = 0;
  int num_classes = 0;
  std::vector<double> x;
  std::vector<int> y;  // -1 marks an unlabeled sample

  int size() const { return dim == 0 ? 0 : static_cast<int>(x.size()) / dim; }
  std::span<const double> row(int i) const {
    return {x.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

Dataset generate(const SyntheticSpec& spec);

/// Labeled / unlabeled / test split. The test set is a fixed 20% random
/// draw taken before labeling; the labeled set is class-stratified.
struct SslSplit {
  SampleSet labeled;
  SampleSet unlabeled;  // no labels
  SampleSet test;
  int num_classes = 0;
};

SslSplit split_dataset(const Dataset& ds, int n_labeled, std::uint64_t seed);

enum class AugStrength { weak, strong };

/// Weak = small additive gaussian noise. Strong = larger noise plus random
/// zero-masking of a fifth of the coordinates.
struct AugmentParams {
  double weak_sigma = 0.05;
  double strong_sigma = 0.5;
  double mask_fraction = 0.2;

  static AugmentParams from_noise(double noise_sigma) {
    return {0.05 * noise_sigma, 0.5 * noise_sigma, 0.2};
  }
};

void augment_row(std::span<const double> in, std::span<double> out, AugStrength strength,
                 const AugmentParams& params, Rng& rng);

/// Headerless CSV: dim float columns then one integer label column, -1 for
/// unlabeled rows. Values survive a round trip exactly.
void save_csv(const std::string& path, const Dataset& ds);
Dataset load_csv(const std::string& path);

}  // namespace leaf
