#pragma once

#include <vector>

#include "leaf/config.hpp"
#include "leaf/data.hpp"
#include "leaf/metrics.hpp"
#include "leaf/model.hpp"

namespace leaf {

/// Per-step observability record. frac_confident is the fraction of
/// unlabeled samples whose positive set collapsed to a single class (or,
/// for the fixed-threshold baseline, the pseudo-label acceptance fraction);
/// mean_m is the average positive-set size. Both are 0 when the step uses
/// no unlabeled data.
struct StepReport {
  int epoch = 0;
  int step = 0;
  double loss_sup = 0.0;
  double loss_unsup = 0.0;
  double loss_total = 0.0;
  double frac_confident = 0.0;
  double mean_m = 0.0;
};

struct EpochReport {
  int epoch = 0;
  double overall_acc = 0.0;
  double balanced_acc = 0.0;
};

struct TrainResult {
  LeafModel model;
  std::vector<StepReport> steps;
  std::vector<EpochReport> epochs;
  Metrics final_test;
};

/// Runs the configured method end to end on the split. Deterministic given
/// the config; throws NumericError carrying the offending step context if a
/// loss or gradient turns non-finite.
TrainResult train(const RunConfig& cfg, const SslSplit& split);

/// Clean-input prediction metrics; the set must carry labels.
Metrics evaluate(const LeafModel& model, const SampleSet& set);

}  // namespace leaf
