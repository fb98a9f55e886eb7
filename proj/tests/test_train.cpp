#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "leaf/experiments.hpp"
#include "leaf/partition.hpp"
#include "leaf/train.hpp"

using namespace leaf;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.data.num_classes = 3;
  cfg.data.dim = 6;
  cfg.data.per_class_counts = {40, 30, 30};  // 100 samples: 20 test, 80 pool
  cfg.data.cluster_separation = 4.0;
  cfg.data.noise_sigma = 0.5;
  cfg.data.seed = 5;
  cfg.n_labeled = 12;
  cfg.epochs = 2;
  cfg.batch_labeled = 8;
  cfg.batch_unlabeled = 8;
  cfg.encoder_hidden = {8};
  cfg.feature_dim = 4;
  return cfg;
}

SslSplit make_split(const RunConfig& cfg) {
  SyntheticSpec spec = cfg.data;
  spec.seed = cfg.effective_data_seed();
  return split_dataset(generate(spec), cfg.n_labeled, cfg.effective_split_seed());
}

bool same_history(const TrainResult& a, const TrainResult& b) {
  if (a.steps.size() != b.steps.size() || a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const auto &x = a.steps[i], &y = b.steps[i];
    if (x.loss_sup != y.loss_sup || x.loss_unsup != y.loss_unsup ||
        x.loss_total != y.loss_total || x.frac_confident != y.frac_confident ||
        x.mean_m != y.mean_m) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    if (a.epochs[i].overall_acc != b.epochs[i].overall_acc ||
        a.epochs[i].balanced_acc != b.epochs[i].balanced_acc) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("config text round-trips losslessly") {
  RunConfig cfg = tiny_config();
  cfg.lambda = 0.3333333333333333;
  cfg.lr = 7.25e-4;
  cfg.method = Method::fixed_threshold;
  cfg.expert_kind = ExpertKind::bottleneck;
  cfg.partition_source = PartitionSource::weak;
  cfg.loss_scores = LossScores::logits;
  cfg.consistency = ConsistencyMode::cross_entropy;
  cfg.augment_labeled = false;

  const std::string text = cfg.to_text();
  RunConfig back = RunConfig::from_text(text);
  CHECK(back.to_text() == text);
  CHECK(back.run_id() == cfg.run_id());

  RunConfig other = cfg;
  other.seed = cfg.seed + 1;
  CHECK(other.run_id() != cfg.run_id());

  CHECK_THROWS_AS(RunConfig::from_text("nonsense_key=1\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_text("method = flexmatch\n"), std::invalid_argument);
  RunConfig bad = cfg;
  bad.top_k = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("metrics definitions") {
  // perfect predictions
  std::vector<int> truth = {0, 1, 2, 1, 0};
  Metrics perfect = compute_metrics(truth, truth, 3);
  CHECK(perfect.overall_acc == 1.0);
  CHECK(perfect.balanced_acc == 1.0);
  for (int t = 0; t < 3; ++t) {
    for (int p = 0; p < 3; ++p) {
      if (t != p) CHECK(perfect.at(t, p) == 0);
    }
  }

  // constant predictor on a 90/10 imbalance
  std::vector<int> imb_truth, imb_pred;
  for (int i = 0; i < 90; ++i) imb_truth.push_back(0);
  for (int i = 0; i < 10; ++i) imb_truth.push_back(1);
  imb_pred.assign(100, 0);
  Metrics constant = compute_metrics(imb_truth, imb_pred, 2);
  CHECK(constant.overall_acc == doctest::Approx(0.9));
  CHECK(constant.balanced_acc == doctest::Approx(0.5));

  // balanced accuracy equals the mean row-normalized diagonal
  Rng rng(3);
  std::vector<int> t2, p2;
  for (int i = 0; i < 500; ++i) {
    t2.push_back(rng.uniform_int(4));
    p2.push_back(rng.uniform_int(4));
  }
  Metrics m = compute_metrics(t2, p2, 4);
  double recomputed = 0.0;
  int present = 0;
  for (int c = 0; c < 4; ++c) {
    int row = 0;
    for (int p = 0; p < 4; ++p) row += m.at(c, p);
    if (row > 0) {
      recomputed += static_cast<double>(m.at(c, c)) / row;
      ++present;
    }
  }
  CHECK(m.balanced_acc == doctest::Approx(recomputed / present).epsilon(1e-12));
}

TEST_CASE("identical configs give identical histories") {
  RunConfig cfg = tiny_config();
  SslSplit split = make_split(cfg);
  TrainResult a = train(cfg, split);
  TrainResult b = train(cfg, split);
  CHECK(same_history(a, b));
  CHECK(metrics_jsonl(a) == metrics_jsonl(b));
}

TEST_CASE("lambda zero reproduces the supervised-only trajectory bit for bit") {
  RunConfig leaf_cfg = tiny_config();
  leaf_cfg.lambda = 0.0;
  RunConfig sup_cfg = tiny_config();
  sup_cfg.method = Method::supervised_only;

  SslSplit split = make_split(leaf_cfg);
  TrainResult a = train(leaf_cfg, split);
  TrainResult b = train(sup_cfg, split);
  CHECK(same_history(a, b));
  for (const auto& s : a.steps) {
    CHECK(s.loss_unsup == 0.0);
    CHECK(s.frac_confident == 0.0);
  }
}

TEST_CASE("an all-labeled split trains without unlabeled data") {
  RunConfig cfg = tiny_config();
  cfg.n_labeled = 80;  // the whole pool
  SslSplit split = make_split(cfg);
  REQUIRE(split.unlabeled.size() == 0);
  TrainResult r = train(cfg, split);
  CHECK(!r.steps.empty());
  for (const auto& s : r.steps) CHECK(s.loss_unsup == 0.0);
}

TEST_CASE("an impossible pseudo-label threshold reduces to supervised-only") {
  RunConfig fixed = tiny_config();
  fixed.method = Method::fixed_threshold;
  fixed.pseudo_threshold = 1.0;
  RunConfig sup = tiny_config();
  sup.method = Method::supervised_only;

  SslSplit split = make_split(fixed);
  TrainResult a = train(fixed, split);
  TrainResult b = train(sup, split);
  CHECK(same_history(a, b));
}

TEST_CASE("a zero threshold pseudo-labels every sample") {
  RunConfig cfg = tiny_config();
  cfg.method = Method::fixed_threshold;
  cfg.pseudo_threshold = 0.0;
  SslSplit split = make_split(cfg);
  TrainResult r = train(cfg, split);
  for (const auto& s : r.steps) CHECK(s.frac_confident == 1.0);
}

TEST_CASE("reported total equals supervised plus weighted consistency") {
  RunConfig cfg = tiny_config();
  cfg.lambda = 0.37;
  SslSplit split = make_split(cfg);
  TrainResult r = train(cfg, split);
  for (const auto& s : r.steps) {
    CHECK(std::abs(s.loss_total - (s.loss_sup + cfg.lambda * s.loss_unsup)) <= 1e-12);
    CHECK(s.loss_sup >= 0.0);
    CHECK(s.loss_unsup >= 0.0);
  }
}

TEST_CASE("pseudo-label acceptance is non-increasing in the threshold") {
  RunConfig cfg = tiny_config();
  SslSplit split = make_split(cfg);
  TrainResult r = train(cfg, split);  // frozen model state

  const int n = std::min(split.unlabeled.size(), 32);
  Tensor batch(n, split.unlabeled.dim);
  for (int i = 0; i < n; ++i) {
    const auto row = split.unlabeled.row(i);
    for (int d = 0; d < split.unlabeled.dim; ++d) batch.at(i, d) = row[static_cast<std::size_t>(d)];
  }
  Tensor probs = softmax_rows(r.model.logits(batch));
  double prev = 2.0;
  for (double tau : {0.0, 0.3, 0.6, 0.9, 0.99, 1.0}) {
    int accepted = 0;
    for (int i = 0; i < n; ++i) {
      double best = 0.0;
      for (int c = 0; c < probs.cols(); ++c) best = std::max(best, probs.at(i, c));
      if (best >= tau) ++accepted;
    }
    const double frac = static_cast<double>(accepted) / n;
    CHECK(frac <= prev);
    prev = frac;
  }
}

TEST_CASE("supervised run separates two linearly separable classes in 200 steps") {
  RunConfig cfg;
  cfg.method = Method::supervised_only;
  cfg.data.num_classes = 2;
  cfg.data.dim = 4;
  cfg.data.per_class_counts = {40, 40};  // 80: 16 test, 64 pool
  cfg.data.cluster_separation = 3.0;
  cfg.data.noise_sigma = 0.1;
  cfg.data.seed = 11;
  cfg.n_labeled = 64;
  cfg.batch_labeled = 32;
  cfg.epochs = 100;  // 2 steps per epoch
  cfg.lr = 0.05;
  cfg.encoder_hidden = {};
  cfg.feature_dim = 4;  // identity encoder
  cfg.use_semantic_eaf = false;
  cfg.use_instance_eaf = false;

  SslSplit split = make_split(cfg);
  TrainResult r = train(cfg, split);
  CHECK(static_cast<int>(r.steps.size()) == 200);
  CHECK(evaluate(r.model, split.labeled).overall_acc == 1.0);
}

TEST_CASE("ablation variants are distinct configurations that all run") {
  RunConfig base = tiny_config();
  base.epochs = 1;
  std::vector<std::string> texts;
  for (const std::string& name : ablation_variant_names()) {
    RunConfig v = apply_ablation_variant(base, name);
    texts.push_back(v.to_text());
    SslSplit split = make_split(v);
    TrainResult r = train(v, split);
    CHECK(!r.steps.empty());
  }
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (std::size_t j = i + 1; j < texts.size(); ++j) CHECK(texts[i] != texts[j]);
  }
  CHECK_THROWS_AS(apply_ablation_variant(base, "bogus"), std::invalid_argument);
}

TEST_CASE("partition source and score space flags take effect") {
  RunConfig base = tiny_config();
  RunConfig flipped_source = tiny_config();
  flipped_source.partition_source = base.partition_source == PartitionSource::weak
                                        ? PartitionSource::strong
                                        : PartitionSource::weak;
  RunConfig flipped_scores = tiny_config();
  flipped_scores.loss_scores =
      base.loss_scores == LossScores::probs ? LossScores::logits : LossScores::probs;

  SslSplit split = make_split(base);
  TrainResult a = train(base, split);
  TrainResult b = train(flipped_source, split);
  TrainResult c = train(flipped_scores, split);
  CHECK(!same_history(a, b));
  CHECK(!same_history(a, c));
}

TEST_CASE("persisted runs are byte-identical for equal configs") {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "leaf_runs_test";
  fs::remove_all(root);

  RunConfig cfg = tiny_config();
  RunOutput a = run_experiment(cfg, (root / "a").string());
  RunOutput b = run_experiment(cfg, (root / "b").string());
  CHECK(a.run_id == b.run_id);

  for (const char* name : {"config", "metrics.jsonl", "summary.csv", "checkpoint"}) {
    std::ifstream fa(fs::path(a.dir) / name, std::ios::binary);
    std::ifstream fb(fs::path(b.dir) / name, std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(!ca.empty());
    CHECK(ca == cb);
  }

  // the saved checkpoint reloads into a fresh model of the same shape
  Rng rng(Rng::derive(cfg.seed, 0));
  LeafModel fresh = LeafModel::init(cfg, cfg.data.dim, cfg.data.num_classes, rng);
  auto params = fresh.named_parameters();
  load_checkpoint((fs::path(a.dir) / "checkpoint").string(), params);
  Metrics reloaded = evaluate(fresh, make_split(cfg).test);
  CHECK(reloaded.overall_acc == a.result.final_test.overall_acc);

  // and the written config file parses back to the identical configuration
  RunConfig reread = RunConfig::load((fs::path(a.dir) / "config").string());
  CHECK(reread.to_text() == cfg.to_text());
  CHECK(read_checkpoint_index((fs::path(a.dir) / "checkpoint").string()).size() ==
        params.size());

  fs::remove_all(root);
}

TEST_CASE("sweep grid shape and the single-run degenerate case") {
  RunConfig base = tiny_config();
  base.epochs = 1;

  const auto single = sweep(base, {12}, {Method::leaf}, 1);
  REQUIRE(single.size() == 1);
  RunConfig one = base;
  one.method = Method::leaf;
  one.n_labeled = 12;
  one.seed = base.seed;
  CHECK(single[0].mean_balanced == run_experiment(one).result.final_test.balanced_acc);
  CHECK(single[0].ok_runs == 1);

  const auto grid = sweep(base, {12, 15}, {Method::leaf, Method::supervised_only}, 1);
  CHECK(grid.size() == 4);  // |labels| x |methods|
  CHECK(sweep_csv(grid).find("supervised_only") != std::string::npos);
  CHECK_THROWS_AS(sweep(base, {}, {Method::leaf}, 1), std::invalid_argument);
}

TEST_CASE("evaluate validates its inputs") {
  RunConfig cfg = tiny_config();
  cfg.epochs = 1;
  SslSplit split = make_split(cfg);
  TrainResult r = train(cfg, split);
  CHECK_THROWS_AS(evaluate(r.model, split.unlabeled), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(r.model, SampleSet{}), std::invalid_argument);
}

}  // TEST_SUITE
