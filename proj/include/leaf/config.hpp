#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "leaf/data.hpp"
#include "leaf/gating.hpp"

namespace leaf {

enum class Method { leaf, supervised_only, fixed_threshold };
enum class ConsistencyMode { ambiguous, cross_entropy, none };
enum class PartitionSource { strong, weak };
enum class LossScores { probs, logits };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

/// Every hyperparameter of a run. Serializes to a plain key=value text file
/// and back without loss; the canonical text also feeds the run id hash.
struct RunConfig {
  Method method = Method::leaf;
  std::uint64_t seed = 1;
  int epochs = 20;
  int batch_labeled = 32;
  int batch_unlabeled = 32;
  double lambda = 1.0;
  double lr = 5e-4;

  // expert banks
  ExpertKind expert_kind = ExpertKind::residual;
  int num_experts = 2;
  int top_k = 2;
  int bottleneck_ratio = 4;
  bool use_semantic_eaf = true;
  bool use_instance_eaf = true;

  // category-level consistency
  ConsistencyMode consistency = ConsistencyMode::ambiguous;
  double threshold_T = 0.9;
  double margin_eps = 0.0;
  PartitionSource partition_source = PartitionSource::weak;
  LossScores loss_scores = LossScores::logits;

  // fixed-threshold baseline
  double pseudo_threshold = 0.95;

  bool augment_labeled = true;

  // backbone
  std::vector<int> encoder_hidden = {64, 64};
  int feature_dim = 32;

  // data
  SyntheticSpec data;
  int n_labeled = 70;

  void validate() const;

  /// Canonical text: every key, fixed order, full float precision.
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);

  void save(const std::string& path) const;
  static RunConfig load(const std::string& path);

  /// FNV-1a hash of the canonical text, as 16 hex digits.
  std::string run_id() const;

  std::uint64_t effective_data_seed() const;
  std::uint64_t effective_split_seed() const;
};

}  // namespace leaf
