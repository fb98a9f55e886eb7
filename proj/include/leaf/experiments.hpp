#pragma once

#include <string>
#include <vector>

#include "leaf/train.hpp"

namespace leaf {

/// One finished run plus where (if anywhere) its artifacts were written.
struct RunOutput {
  RunConfig config;
  TrainResult result;
  std::string run_id;
  std::string dir;  // empty when nothing was persisted
};

/// Builds the dataset and split from the config, trains, and (when out_root
/// is nonempty) writes out_root/<run_id>/{config,metrics.jsonl,summary.csv,
/// checkpoint}.
RunOutput run_experiment(const RunConfig& cfg, const std::string& out_root = "");

/// Deterministic serializations shared by the CLI and the tests.
std::string metrics_jsonl(const TrainResult& result);
std::string summary_csv_header();
std::string summary_csv_row(const RunConfig& cfg, const TrainResult& result);

struct SweepCell {
  std::string method;
  int n_labeled = 0;
  int ok_runs = 0;
  int failed_runs = 0;
  double mean_balanced = 0.0;
  double std_balanced = 0.0;
  double mean_overall = 0.0;
};

/// Cross product of label counts x methods x seeds (seeds are
/// base_seed..base_seed+num_seeds-1). A failed cell member is counted and
/// the sweep continues.
std::vector<SweepCell> sweep(const RunConfig& base, const std::vector<int>& label_counts,
                             const std::vector<Method>& methods, int num_seeds,
                             const std::string& out_root = "");
std::string sweep_csv(const std::vector<SweepCell>& cells);

/// The component-ablation variants, in report order.
std::vector<std::string> ablation_variant_names();
/// Applies one variant by name to a base config (full, no_semantic_eaf,
/// no_instance_eaf, no_category_eaf, hard_label_ce).
RunConfig apply_ablation_variant(const RunConfig& base, const std::string& variant);

struct AblationRow {
  std::string variant;
  int ok_runs = 0;
  int failed_runs = 0;
  double mean_balanced = 0.0;
  double std_balanced = 0.0;
  double mean_overall = 0.0;
};

std::vector<AblationRow> ablate(const RunConfig& base, int num_seeds);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace leaf
