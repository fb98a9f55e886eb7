#include "leaf/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "leaf/partition.hpp"

namespace leaf {

namespace {

// Index pool that cycles endlessly, reshuffling on every wrap.
class BatchPool {
 public:
  BatchPool(int n, Rng& rng) : order_(static_cast<std::size_t>(n)), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
  }

  void next(int count, std::vector<int>& out) {
    out.clear();
    for (int i = 0; i < count; ++i) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
  }

 private:
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  Rng& rng_;
};

Tensor copy_batch(const SampleSet& set, const std::vector<int>& idx) {
  Tensor x(static_cast<int>(idx.size()), set.dim);
  auto v = x.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto row = set.row(idx[r]);
    std::copy(row.begin(), row.end(), v.begin() + static_cast<std::ptrdiff_t>(r * row.size()));
  }
  return x;
}

Tensor augment_batch(const SampleSet& set, const std::vector<int>& idx, AugStrength strength,
                     const AugmentParams& params, Rng& rng) {
  Tensor x(static_cast<int>(idx.size()), set.dim);
  auto v = x.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    augment_row(set.row(idx[r]),
                std::span<double>{v.data() + r * static_cast<std::size_t>(set.dim),
                                  static_cast<std::size_t>(set.dim)},
                strength, params, rng);
  }
  return x;
}

int argmax_row(std::span<const double> row) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(row.size()); ++c) {
    if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

std::vector<int> predict(const LeafModel& model, const SampleSet& set, int chunk = 256) {
  std::vector<int> preds;
  preds.reserve(static_cast<std::size_t>(set.size()));
  std::vector<int> idx;
  for (int begin = 0; begin < set.size(); begin += chunk) {
    const int end = std::min(begin + chunk, set.size());
    idx.resize(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    Tensor logits = model.logits(copy_batch(set, idx));
    for (int r = 0; r < logits.rows(); ++r) {
      preds.push_back(argmax_row({logits.values().data() +
                                      static_cast<std::size_t>(r) * logits.cols(),
                                  static_cast<std::size_t>(logits.cols())}));
    }
  }
  return preds;
}

}  // namespace

Metrics evaluate(const LeafModel& model, const SampleSet& set) {
  if (set.size() == 0) throw std::invalid_argument("evaluate: empty set");
  if (set.y.empty()) throw std::invalid_argument("evaluate: set has no labels");
  const std::vector<int> preds = predict(model, set);
  return compute_metrics(set.y, preds, model.num_classes);
}

TrainResult train(const RunConfig& cfg, const SslSplit& split) {
  cfg.validate();
  const int n_l = split.labeled.size();
  const int n_u = split.unlabeled.size();
  if (n_l == 0) throw std::invalid_argument("train: split has no labeled samples");
  if (split.test.size() == 0) throw std::invalid_argument("train: split has no test samples");

  // Independent draw streams so that, e.g., skipping the unlabeled branch
  // cannot perturb labeled augmentation.
  Rng init_rng(Rng::derive(cfg.seed, 0));
  Rng shuffle_l_rng(Rng::derive(cfg.seed, 1));
  Rng shuffle_u_rng(Rng::derive(cfg.seed, 2));
  Rng aug_l_rng(Rng::derive(cfg.seed, 3));
  Rng aug_u_rng(Rng::derive(cfg.seed, 4));

  TrainResult result{LeafModel::init(cfg, split.labeled.dim, split.num_classes, init_rng), {}, {}, {}};
  LeafModel& model = result.model;
  AdamOptimizer opt(model.parameters(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  const AugmentParams aug = AugmentParams::from_noise(cfg.data.noise_sigma);

  const bool use_unlabeled = n_u > 0 && cfg.lambda > 0.0 &&
                             cfg.method != Method::supervised_only &&
                             !(cfg.method == Method::leaf && cfg.consistency == ConsistencyMode::none);

  // Epoch length follows the whole training set at the combined batch size;
  // a purely labeled split falls back to labeled passes. Both pools cycle
  // (with a reshuffle) whenever they run out mid-epoch.
  const int steps_per_epoch =
      n_u > 0 ? (n_l + n_u + cfg.batch_labeled + cfg.batch_unlabeled - 1) /
                    (cfg.batch_labeled + cfg.batch_unlabeled)
              : (n_l + cfg.batch_labeled - 1) / cfg.batch_labeled;

  BatchPool pool_l(n_l, shuffle_l_rng);
  std::unique_ptr<BatchPool> pool_u;
  if (use_unlabeled) pool_u = std::make_unique<BatchPool>(n_u, shuffle_u_rng);

  std::vector<int> lidx, uidx;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int step = 0; step < steps_per_epoch; ++step) {
      StepReport report;
      report.epoch = epoch;
      report.step = step;
      try {
        pool_l.next(cfg.batch_labeled, lidx);
        Tensor labeled_x = cfg.augment_labeled
                               ? augment_batch(split.labeled, lidx, AugStrength::weak, aug, aug_l_rng)
                               : copy_batch(split.labeled, lidx);
        std::vector<int> labels(lidx.size());
        for (std::size_t i = 0; i < lidx.size(); ++i) {
          labels[i] = split.labeled.y[static_cast<std::size_t>(lidx[i])];
        }

        // Unlabeled views and the pseudo-label decision are prepared before
        // the tape exists: the decision side is a discrete, gradient-free
        // choice.
        Tensor loss_side_x;
        std::vector<Partition> parts;
        std::vector<int> hard_labels;       // consistency = cross_entropy
        std::vector<int> accepted;          // fixed-threshold rows
        std::vector<int> pseudo;            // fixed-threshold labels
        Tensor strong_x;
        if (use_unlabeled) {
          pool_u->next(cfg.batch_unlabeled, uidx);
          Tensor weak_x = augment_batch(split.unlabeled, uidx, AugStrength::weak, aug, aug_u_rng);
          strong_x = augment_batch(split.unlabeled, uidx, AugStrength::strong, aug, aug_u_rng);

          if (cfg.method == Method::leaf) {
            const bool strong_decides = cfg.partition_source == PartitionSource::strong;
            const Tensor& decision_x = strong_decides ? strong_x : weak_x;
            loss_side_x = strong_decides ? weak_x : strong_x;
            Tensor probs = softmax_rows(model.logits(decision_x));
            int confident = 0;
            double m_sum = 0.0;
            for (int r = 0; r < probs.rows(); ++r) {
              std::span<const double> row{probs.values().data() +
                                              static_cast<std::size_t>(r) * probs.cols(),
                                          static_cast<std::size_t>(probs.cols())};
              if (cfg.consistency == ConsistencyMode::ambiguous) {
                parts.push_back(make_partition(row, cfg.threshold_T));
                m_sum += parts.back().m;
                if (parts.back().m == 1) ++confident;
              } else {  // hard pseudo-labels from the decision view
                hard_labels.push_back(argmax_row(row));
                m_sum += 1.0;
                ++confident;
              }
            }
            report.frac_confident = static_cast<double>(confident) / probs.rows();
            report.mean_m = m_sum / probs.rows();
          } else {  // fixed_threshold: weak view decides, strong view learns
            Tensor probs = softmax_rows(model.logits(weak_x));
            for (int r = 0; r < probs.rows(); ++r) {
              std::span<const double> row{probs.values().data() +
                                              static_cast<std::size_t>(r) * probs.cols(),
                                          static_cast<std::size_t>(probs.cols())};
              const int best = argmax_row(row);
              if (row[static_cast<std::size_t>(best)] >= cfg.pseudo_threshold) {
                accepted.push_back(r);
                pseudo.push_back(best);
              }
            }
            report.frac_confident = static_cast<double>(accepted.size()) / probs.rows();
            report.mean_m = accepted.empty() ? 0.0 : 1.0;
          }
        }

        double sup_v = 0.0, unsup_v = 0.0, total_v = 0.0;
        {
          Tape tape;
          Tensor sup = cross_entropy_mean(model.logits(labeled_x), labels);
          Tensor total = sup;
          bool have_unsup = false;
          Tensor unsup;
          if (use_unlabeled) {
            if (cfg.method == Method::leaf) {
              Tensor ulogits = model.logits(loss_side_x);
              if (cfg.consistency == ConsistencyMode::ambiguous) {
                Tensor scores =
                    cfg.loss_scores == LossScores::probs ? softmax_rows(ulogits) : ulogits;
                unsup = ambiguous_consistency_mean(scores, parts, cfg.margin_eps);
              } else {
                unsup = cross_entropy_mean(ulogits, hard_labels);
              }
              have_unsup = true;
            } else if (!accepted.empty()) {
              // below-threshold samples contribute zero: gather the accepted
              // rows and normalize by the full unlabeled batch
              Tensor acc_x(static_cast<int>(accepted.size()), strong_x.cols());
              for (std::size_t i = 0; i < accepted.size(); ++i) {
                for (int c = 0; c < strong_x.cols(); ++c) {
                  acc_x.at(static_cast<int>(i), c) = strong_x.at(accepted[i], c);
                }
              }
              Tensor ce = cross_entropy_mean(model.logits(acc_x), pseudo);
              unsup = scalar_mul(ce, static_cast<double>(accepted.size()) / cfg.batch_unlabeled);
              have_unsup = true;
            }
            if (have_unsup) total = add(sup, scalar_mul(unsup, cfg.lambda));
          }
          sup_v = sup.values()[0];
          unsup_v = have_unsup ? unsup.values()[0] : 0.0;
          total_v = total.values()[0];
          tape.run_backward(total);
        }

        report.loss_sup = sup_v;
        report.loss_unsup = unsup_v;
        report.loss_total = total_v;
        opt.step();
        opt.zero_grad();
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "train: epoch " << epoch << " step " << step << ": " << e.what()
           << " [loss_sup=" << report.loss_sup << " loss_unsup=" << report.loss_unsup << "]";
        throw NumericError(os.str());
      }
      result.steps.push_back(report);
    }

    const Metrics m = evaluate(model, split.test);
    result.epochs.push_back(EpochReport{epoch, m.overall_acc, m.balanced_acc});
    result.final_test = m;
  }
  return result;
}

}  // namespace leaf
