#pragma once

#include <string>
#include <utility>
#include <vector>

#include "leaf/config.hpp"
#include "leaf/gating.hpp"
#include "leaf/nn.hpp"

namespace leaf {

/// Encoder -> semantic-level expert fusion -> classifier -> instance-level
/// expert fusion. Either fusion stage can be disabled, leaving the plain
/// path through.
struct LeafModel {
  int input_dim = 0;
  int feature_dim = 0;
  int num_classes = 0;
  bool use_semantic = true;
  bool use_instance = true;

  MlpEncoder encoder;
  ExpertBank semantic;  // only populated when use_semantic
  LinearLayer classifier;
  ExpertBank instance;  // only populated when use_instance

  static LeafModel init(const RunConfig& cfg, int input_dim, int num_classes, Rng& rng);

  /// Encoder features after semantic-level fusion.
  Tensor features(const Tensor& x) const;
  /// Full prediction path; the returned logits are post instance-level
  /// fusion and feed both the supervised loss and the pseudo-labeling side.
  Tensor logits(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  /// Pointers to the member handles themselves, so a caller can rebind a
  /// parameter to different storage (used by the finite-difference suite).
  std::vector<Tensor*> parameter_slots();
};

}  // namespace leaf
