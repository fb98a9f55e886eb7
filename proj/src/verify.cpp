#include "leaf/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "leaf/model.hpp"
#include "leaf/nn.hpp"
#include "leaf/partition.hpp"
#include "leaf/rng.hpp"
#include "leaf/tensor.hpp"

namespace leaf {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor random_tensor(Rng& rng, int rows, int cols, double lo = -5.0, double hi = 5.0) {
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Tensor away_from_zero(Tensor t, double margin) {
  for (auto& v : t.values()) {
    if (std::abs(v) < margin) v = v < 0.0 ? -margin : margin;
  }
  return t;
}

// Row values with pairwise gaps of at least 0.3, so a 1e-3 stencil can
// never flip the top-k selection.
Tensor gapped_tensor(Rng& rng, int rows, int cols) {
  Tensor t(rows, cols);
  std::vector<int> perm(static_cast<std::size_t>(cols));
  for (int r = 0; r < rows; ++r) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    for (int c = 0; c < cols; ++c) {
      t.at(r, c) = 0.5 * perm[static_cast<std::size_t>(c)] + rng.uniform(-0.09, 0.09);
    }
  }
  return t;
}

std::vector<double> random_simplex(Rng& rng, int k) {
  std::vector<double> p(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (auto& v : p) {
    v = -std::log(1.0 - rng.uniform());
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

// Independent cumulative-sum oracle for the partition rule: full prefix
// array, linear scan, then the clamp.
int partition_m_oracle(const std::vector<double>& probs, double threshold) {
  const int k = static_cast<int>(probs.size());
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
  std::vector<double> prefix(static_cast<std::size_t>(k));
  double cum = 0.0;
  for (int i = 0; i < k; ++i) {
    cum += probs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    prefix[static_cast<std::size_t>(i)] = cum;
  }
  int m = k;
  for (int i = 0; i < k; ++i) {
    if (prefix[static_cast<std::size_t>(i)] >= threshold) {
      m = i + 1;
      break;
    }
  }
  return std::min(std::max(m, 1), k - 1);
}

// ---- per-op finite differences ----------------------------------------------

double op_gradcheck(Rng& rng, const std::string& op, int trials = 100) {
  const double step = 1e-3;
  double max_err = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const int rows = 1 + rng.uniform_int(3);
    const int cols = 2 + rng.uniform_int(4);
    Tensor x = random_tensor(rng, rows, cols);
    Tensor other = random_tensor(rng, rows, cols);
    Tensor rowvec = random_tensor(rng, 1, cols);
    double err = 0.0;
    if (op == "add") {
      err = grad_check([&](const Tensor& t) { return sum_all(add(t, other)); }, x, step);
    } else if (op == "add_broadcast") {
      err = grad_check([&](const Tensor& t) { return sum_all(add(t, rowvec)); }, x, step);
    } else if (op == "sub") {
      err = grad_check([&](const Tensor& t) { return sum_all(sub(other, t)); }, x, step);
    } else if (op == "mul_elementwise") {
      err = grad_check([&](const Tensor& t) { return sum_all(mul_elementwise(t, other)); }, x, step);
    } else if (op == "scalar_mul") {
      err = grad_check([&](const Tensor& t) { return sum_all(scalar_mul(t, -1.7)); }, x, step);
    } else if (op == "matmul") {
      Tensor w = random_tensor(rng, cols, 3);
      err = grad_check([&](const Tensor& t) { return sum_all(matmul(t, w)); }, x, step);
      Tensor a = random_tensor(rng, 3, rows);
      err = std::max(err, grad_check([&](const Tensor& t) { return sum_all(matmul(a, t)); }, x, step));
    } else if (op == "relu") {
      Tensor nk = away_from_zero(x.clone(), 0.05);
      err = grad_check([&](const Tensor& t) { return sum_all(relu(t)); }, nk, step);
    } else if (op == "exp") {
      err = grad_check([&](const Tensor& t) { return sum_all(exp(scalar_mul(t, 0.4))); }, x, step);
    } else if (op == "log") {
      Tensor pos = random_tensor(rng, rows, cols, 0.1, 5.0);
      err = grad_check([&](const Tensor& t) { return sum_all(log(t)); }, pos, step);
    } else if (op == "softplus") {
      err = grad_check([&](const Tensor& t) { return sum_all(softplus(t)); }, x, step);
    } else if (op == "softmax_rows") {
      err = grad_check(
          [&](const Tensor& t) { return sum_all(mul_elementwise(softmax_rows(t), other)); }, x,
          step);
    } else if (op == "topk_mask") {
      Tensor g = gapped_tensor(rng, rows, cols);
      const int k = 1 + rng.uniform_int(cols);
      err = grad_check(
          [&](const Tensor& t) {
            return sum_all(mul_elementwise(softmax_rows(topk_mask(t, k)), other));
          },
          g, step);
    } else if (op == "sum_all") {
      err = grad_check([&](const Tensor& t) { return sum_all(t); }, x, step);
    } else if (op == "mean_all") {
      err = grad_check([&](const Tensor& t) { return mean_all(t); }, x, step);
    } else if (op == "concat_cols") {
      err = grad_check(
          [&](const Tensor& t) { return sum_all(mul_elementwise(concat_cols(t, other),
                                                                concat_cols(other, t))); },
          x, step);
    } else if (op == "slice_cols") {
      err = grad_check([&](const Tensor& t) { return sum_all(slice_cols(t, 1, cols)); }, x, step);
    } else if (op == "cross_entropy_mean") {
      std::vector<int> labels(static_cast<std::size_t>(rows));
      for (auto& l : labels) l = rng.uniform_int(cols);
      err = grad_check([&](const Tensor& t) { return cross_entropy_mean(t, labels); }, x, step);
    } else if (op == "ambiguous_consistency") {
      std::vector<Partition> parts;
      for (int r = 0; r < rows; ++r) {
        parts.push_back(make_partition(random_simplex(rng, cols), 0.5 + 0.4 * rng.uniform()));
      }
      const double margin = trial % 2 == 0 ? 0.0 : 0.5;
      err = grad_check(
          [&](const Tensor& t) { return ambiguous_consistency_mean(t, parts, margin); }, x, step);
    } else {
      throw std::logic_error("op_gradcheck: unknown op " + op);
    }
    max_err = std::max(max_err, err);
  }
  return max_err;
}

// ---- composed-loss finite differences ---------------------------------------

bool bank_safe(const Tensor& in, const ExpertBank& bank, double margin) {
  if (bank.top_k < bank.num_experts()) {
    Tensor s = softplus(matmul(in, bank.gate_weight));
    std::vector<double> row(static_cast<std::size_t>(s.cols()));
    for (int r = 0; r < s.rows(); ++r) {
      for (int c = 0; c < s.cols(); ++c) row[static_cast<std::size_t>(c)] = s.at(r, c);
      std::sort(row.begin(), row.end(), std::greater<>());
      if (row[static_cast<std::size_t>(bank.top_k - 1)] - row[static_cast<std::size_t>(bank.top_k)] < margin) {
        return false;
      }
    }
  }
  for (const auto& e : bank.experts) {
    if (e.kind == ExpertKind::linear) continue;
    Tensor pre = e.first.forward(in);
    for (double v : pre.values()) {
      if (std::abs(v) < margin) return false;
    }
  }
  return true;
}

// True when every relu input and top-k gate boundary reached by `x` keeps a
// margin, so central differences stay on one smooth branch.
bool fd_safe(const LeafModel& model, const Tensor& x, double margin) {
  Tensor h = x;
  for (std::size_t i = 0; i < model.encoder.layers.size(); ++i) {
    Tensor pre = model.encoder.layers[i].forward(h);
    if (i + 1 < model.encoder.layers.size()) {
      for (double v : pre.values()) {
        if (std::abs(v) < margin) return false;
      }
      h = relu(pre);
    } else {
      h = pre;
    }
  }
  if (model.use_semantic) {
    if (!bank_safe(h, model.semantic, margin)) return false;
    h = fuse(h, model.semantic);
  }
  Tensor p = model.classifier.forward(h);
  if (model.use_instance && !bank_safe(p, model.instance, margin)) return false;
  return true;
}

struct ComposedSetup {
  LeafModel model;
  int input_dim;
  int num_classes;
};

ComposedSetup make_setup(ExpertKind kind, std::vector<int> hidden, Rng& rng) {
  RunConfig cfg;
  cfg.encoder_hidden = std::move(hidden);
  cfg.feature_dim = 4;
  cfg.expert_kind = kind;
  cfg.num_experts = kind == ExpertKind::linear ? 2 : 3;
  cfg.top_k = kind == ExpertKind::linear ? 1 : 2;
  cfg.bottleneck_ratio = 2;
  ComposedSetup s{LeafModel::init(cfg, 5, 3, rng), 5, 3};
  return s;
}

Tensor safe_input(const ComposedSetup& s, Rng& rng, double margin) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Tensor x = random_tensor(rng, 2, s.input_dim, -2.0, 2.0);
    if (fd_safe(s.model, x, margin)) return x;
  }
  throw std::logic_error("safe_input: could not find a kink-free input");
}

// max relative error of d loss / d x and (optionally) d loss / d params
double composed_gradcheck(ComposedSetup& s, Rng& rng, bool supervised, int input_trials,
                          int param_trials) {
  const double step = 1e-4;
  const double margin = 0.02;
  double max_err = 0.0;

  auto make_loss = [&](const std::vector<int>& labels, const std::vector<Partition>& parts,
                       double eps) {
    return [&s, labels, parts, eps, supervised](const Tensor& xx) {
      Tensor logits = s.model.logits(xx);
      if (supervised) return cross_entropy_mean(logits, labels);
      return ambiguous_consistency_mean(softmax_rows(logits), parts, eps);
    };
  };

  for (int trial = 0; trial < input_trials + param_trials; ++trial) {
    Tensor x = safe_input(s, rng, margin);
    std::vector<int> labels(static_cast<std::size_t>(x.rows()));
    for (auto& l : labels) l = rng.uniform_int(s.num_classes);
    std::vector<Partition> parts;
    if (!supervised) {
      Tensor probs = softmax_rows(s.model.logits(x));
      for (int r = 0; r < probs.rows(); ++r) {
        parts.push_back(make_partition(
            {probs.values().data() + static_cast<std::size_t>(r) * probs.cols(),
             static_cast<std::size_t>(probs.cols())},
            trial % 2 == 0 ? 0.9 : 0.5));
      }
    }
    const double eps = trial % 2 == 0 ? 0.0 : 0.3;
    auto f = make_loss(labels, parts, eps);

    if (trial < input_trials) {
      max_err = std::max(max_err, grad_check(f, x, step));
    } else {
      // rebind each parameter slot to the candidate the checker supplies
      for (Tensor* slot : s.model.parameter_slots()) {
        Tensor original = *slot;
        auto fp = [&, slot](const Tensor& cand) {
          *slot = cand;
          Tensor out = f(x);
          *slot = original;
          return out;
        };
        max_err = std::max(max_err, grad_check(fp, original, step));
        *slot = original;
      }
    }
  }
  return max_err;
}

}  // namespace

SuiteResult gradcheck_suite(std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult suite;
  const double tol = 1e-4;

  const char* ops[] = {"matmul",       "add",        "add_broadcast", "sub",
                       "mul_elementwise", "scalar_mul", "relu",          "exp",
                       "log",          "softplus",   "softmax_rows",  "topk_mask",
                       "sum_all",      "mean_all",   "concat_cols",   "slice_cols",
                       "cross_entropy_mean", "ambiguous_consistency"};
  auto add_err = [&](const std::string& name, double err) {
    suite.add(name, err, tol, err < tol);
  };

  int stream = 0;
  for (const char* op : ops) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(stream++)));
    add_err(std::string("gradcheck/") + op, op_gradcheck(rng, op));
  }

  {
    Rng rng(Rng::derive(seed, 50));
    ComposedSetup plain = make_setup(ExpertKind::linear, {}, rng);
    add_err("gradcheck/supervised_loss_through_eaf",
            composed_gradcheck(plain, rng, true, 100, 2));

    ComposedSetup plain2 = make_setup(ExpertKind::linear, {}, rng);
    add_err("gradcheck/consistency_loss_through_eaf",
            composed_gradcheck(plain2, rng, false, 100, 2));

    ComposedSetup deep = make_setup(ExpertKind::residual, {6}, rng);
    add_err("gradcheck/supervised_loss_residual_experts",
            composed_gradcheck(deep, rng, true, 10, 1));

    ComposedSetup deep2 = make_setup(ExpertKind::residual, {6}, rng);
    add_err("gradcheck/consistency_loss_residual_experts",
            composed_gradcheck(deep2, rng, false, 10, 1));
  }

  suite.seconds = elapsed(start);
  return suite;
}

SuiteResult oracle_suite(std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult suite;

  // partition vs brute-force cumulative-sum oracle
  {
    Rng rng(Rng::derive(seed, 200));
    const double thresholds[] = {0.5, 0.9, 0.99};
    int mismatches = 0;
    int minimality_violations = 0;
    const int trials = 100000;
    for (int t = 0; t < trials; ++t) {
      const int k = 2 + rng.uniform_int(9);
      const double T = thresholds[t % 3];
      const auto probs = random_simplex(rng, k);
      const Partition part = make_partition(probs, T);
      if (part.m != partition_m_oracle(probs, T)) ++mismatches;
      // minimality: the positive set is the smallest threshold-reaching
      // prefix unless the clamp forced it
      double cum = 0.0;
      for (int i = 0; i < part.m - 1; ++i) cum += probs[static_cast<std::size_t>(part.order[static_cast<std::size_t>(i)])];
      if (part.m > 1 && cum >= T) ++minimality_violations;
      const double cum_m = cum + probs[static_cast<std::size_t>(part.order[static_cast<std::size_t>(part.m - 1)])];
      if (cum_m < T && part.m != k - 1) ++minimality_violations;
      if (part.m < 1 || part.m > k - 1) ++minimality_violations;
    }
    suite.add("oracle/partition_matches_bruteforce", mismatches, 0, mismatches == 0);
    suite.add("oracle/partition_minimality_and_clamp", minimality_violations, 0,
              minimality_violations == 0);
  }

  // smooth loss vs direct summation, and the hinge bounds
  {
    Rng rng(Rng::derive(seed, 201));
    double max_gap = 0.0;
    bool lower_ok = true, upper_ok = true;
    for (int t = 0; t < 2000; ++t) {
      const int k = 2 + rng.uniform_int(9);
      const Partition part = make_partition(random_simplex(rng, k), 0.5 + 0.45 * rng.uniform());
      Tensor scores = random_tensor(rng, 1, k, -8.0, 8.0);
      const double impl = ambiguous_consistency_mean(scores, {part}, 0.0).values()[0];
      double sp = 0.0, sn = 0.0;
      for (int i : part.positive()) sp += std::exp(-scores.values()[static_cast<std::size_t>(i)]);
      for (int j : part.negative()) sn += std::exp(scores.values()[static_cast<std::size_t>(j)]);
      const double naive = std::log(1.0 + sp * sn);
      max_gap = std::max(max_gap, std::abs(impl - naive));
      const double hinge = hinge_oracle(scores.values(), part, 0.0);
      if (impl < hinge - 1e-12) lower_ok = false;
      const int m = part.m;
      if (impl - hinge > std::log(1.0 + static_cast<double>(m) * (k - m)) + 1e-12) upper_ok = false;
    }
    suite.add("oracle/loss_matches_direct_summation", max_gap, 1e-9, max_gap < 1e-9);
    suite.add("oracle/loss_bounded_below_by_hinge", lower_ok ? 0.0 : 1.0, 0, lower_ok);
    suite.add("oracle/loss_gap_bounded_by_log1p_m_times_neg", upper_ok ? 0.0 : 1.0, 0, upper_ok);
  }

  // derivative signs: positive-class scores pull the loss down, negatives
  // push it up
  {
    Rng rng(Rng::derive(seed, 202));
    bool signs_ok = true;
    for (int t = 0; t < 500 && signs_ok; ++t) {
      const int k = 2 + rng.uniform_int(9);
      const Partition part = make_partition(random_simplex(rng, k), 0.5 + 0.45 * rng.uniform());
      Tensor scores = random_tensor(rng, 1, k, -6.0, 6.0);
      scores.set_requires_grad(true);
      {
        Tape tape;
        tape.run_backward(ambiguous_consistency_mean(scores, {part}, 0.0));
      }
      for (int i : part.positive()) {
        if (!(scores.grad()[static_cast<std::size_t>(i)] < 0.0)) signs_ok = false;
      }
      for (int j : part.negative()) {
        if (!(scores.grad()[static_cast<std::size_t>(j)] > 0.0)) signs_ok = false;
      }
    }
    suite.add("oracle/loss_gradient_signs", signs_ok ? 0.0 : 1.0, 0, signs_ok);
  }

  // scale limit: at 100x the scores, the loss vanishes iff the margin holds
  {
    Rng rng(Rng::derive(seed, 203));
    bool limit_ok = true;
    for (int t = 0; t < 500 && limit_ok; ++t) {
      const int k = 2 + rng.uniform_int(9);
      const Partition part = make_partition(random_simplex(rng, k), 0.5 + 0.45 * rng.uniform());
      Tensor scores = random_tensor(rng, 1, k, -3.0, 3.0);
      double min_pos = scores.values()[static_cast<std::size_t>(part.positive()[0])];
      for (int i : part.positive()) min_pos = std::min(min_pos, scores.values()[static_cast<std::size_t>(i)]);
      double max_neg = scores.values()[static_cast<std::size_t>(part.negative()[0])];
      for (int j : part.negative()) max_neg = std::max(max_neg, scores.values()[static_cast<std::size_t>(j)]);
      const double gap = min_pos - max_neg;
      if (std::abs(gap) < 0.15) continue;  // undecided this close to the boundary
      Tensor scaled = scalar_mul(scores, 100.0);
      const double big = ambiguous_consistency_mean(scaled, {part}, 0.0).values()[0];
      if (gap > 0.0 && big > 1e-2) limit_ok = false;   // margin satisfied: loss vanishes
      if (gap < 0.0 && big < 1.0) limit_ok = false;    // margin violated: loss stays large
    }
    suite.add("oracle/loss_scale_limit_matches_hinge", limit_ok ? 0.0 : 1.0, 0, limit_ok);
  }

  suite.seconds = elapsed(start);
  return suite;
}

}  // namespace leaf
