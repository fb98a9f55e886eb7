#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "leaf/partition.hpp"
#include "leaf/rng.hpp"

using namespace leaf;

namespace {

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

// independent cumulative oracle used by the property test
int oracle_m(const std::vector<double>& probs, double threshold) {
  const int k = static_cast<int>(probs.size());
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
  double cum = 0.0;
  int m = k;
  for (int i = 0; i < k; ++i) {
    cum += probs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    if (cum >= threshold) {
      m = i + 1;
      break;
    }
  }
  return std::clamp(m, 1, k - 1);
}

Tensor row_tensor(const std::vector<double>& v) {
  Tensor t(1, static_cast<int>(v.size()));
  for (int i = 0; i < t.size(); ++i) t.values()[i] = v[static_cast<std::size_t>(i)];
  return t;
}

}  // namespace

TEST_SUITE("partition") {

TEST_CASE("cumulative rule on hand-checked vectors") {
  // 0.5 -> 0.8 -> 0.95: three classes reach T=0.9
  Partition p = make_partition(std::vector<double>{0.5, 0.3, 0.15, 0.05}, 0.9);
  CHECK(p.m == 3);
  CHECK(p.order[0] == 0);
  CHECK(p.order[1] == 1);
  CHECK(p.order[2] == 2);

  Partition onehot = make_partition(std::vector<double>{0, 1, 0, 0}, 0.9);
  CHECK(onehot.m == 1);
  CHECK(onehot.positive()[0] == 1);

  // uniform over 7: six classes stay below 0.9, the clamp stops at k-1
  std::vector<double> uniform(7, 1.0 / 7.0);
  CHECK(make_partition(uniform, 0.9).m == 6);
}

TEST_CASE("ties break toward the lower class index") {
  Partition p = make_partition(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 0.5);
  CHECK(p.order[0] == 0);
  CHECK(p.order[1] == 1);
  CHECK(p.m == 2);
}

TEST_CASE("non-simplex input is rejected") {
  CHECK_THROWS_AS(make_partition(std::vector<double>{0.5, 0.6}, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(make_partition(std::vector<double>{1.2, -0.2}, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(make_partition(std::vector<double>{1.0}, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(make_partition(std::vector<double>{0.5, 0.5}, 1.5), std::invalid_argument);
}

TEST_CASE("matches the brute-force oracle on random simplex vectors") {
  Rng rng(42);
  const double thresholds[] = {0.5, 0.9, 0.99};
  for (int t = 0; t < 10000; ++t) {
    const int k = 2 + rng.uniform_int(9);
    const double T = thresholds[t % 3];
    const auto probs = random_simplex(rng, k);
    const Partition part = make_partition(probs, T);
    CHECK(part.m == oracle_m(probs, T));
    CHECK(part.m >= 1);
    CHECK(part.m <= k - 1);
  }
}

TEST_CASE("loss on well-separated scores is nearly zero") {
  // positives +10, negatives -10, m=3 of k=7: direct sum gives
  // log(1 + 3e^-10 * 4e^-10) = log(1 + 12e^-20)
  std::vector<double> probs = {0.4, 0.3, 0.25, 0.0125, 0.0125, 0.0125, 0.0125};
  Partition part = make_partition(probs, 0.9);
  REQUIRE(part.m == 3);
  Tensor scores = Tensor::row({10, 10, 10, -10, -10, -10, -10});
  const double loss = ambiguous_consistency_mean(scores, {part}, 0.0).values()[0];
  const double expect = std::log1p(12.0 * std::exp(-20.0));
  CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
  CHECK(loss < 3e-8);
}

TEST_CASE("all-equal scores give log(1 + m(k-m))") {
  std::vector<double> probs = {0.4, 0.3, 0.25, 0.0125, 0.0125, 0.0125, 0.0125};
  Partition part = make_partition(probs, 0.9);  // m = 3, k = 7
  Tensor scores(1, 7, 0.7);
  const double loss = ambiguous_consistency_mean(scores, {part}, 0.0).values()[0];
  CHECK(loss == doctest::Approx(std::log(13.0)).epsilon(1e-12));
}

TEST_CASE("smooth loss dominates the hinge and stays within the log gap") {
  Rng rng(7);
  for (int t = 0; t < 1000; ++t) {
    const int k = 2 + rng.uniform_int(9);
    Partition part = make_partition(random_simplex(rng, k), 0.5 + 0.45 * rng.uniform());
    std::vector<double> scores(static_cast<std::size_t>(k));
    for (auto& s : scores) s = rng.uniform(-6.0, 6.0);
    const double smooth = ambiguous_consistency_mean(row_tensor(scores), {part}, 0.0).values()[0];
    const double hinge = hinge_oracle(scores, part, 0.0);
    CHECK(smooth >= hinge - 1e-12);
    CHECK(smooth - hinge <= std::log(1.0 + static_cast<double>(part.m) * (k - part.m)) + 1e-12);
  }
}

TEST_CASE("hinge oracle arithmetic") {
  std::vector<double> probs = {0.6, 0.3, 0.05, 0.05};
  Partition part = make_partition(probs, 0.85);  // positives {0,1}
  REQUIRE(part.m == 2);

  // satisfied margin
  CHECK(hinge_oracle(std::vector<double>{3.0, 2.5, 1.0, 0.5}, part, 0.0) == 0.0);
  // max negative 2.0, min positive 1.5
  CHECK(hinge_oracle(std::vector<double>{3.0, 1.5, 2.0, 0.5}, part, 0.0) == doctest::Approx(0.5));
  // margin shifts the boundary
  CHECK(hinge_oracle(std::vector<double>{3.0, 2.5, 1.0, 0.5}, part, 2.0) ==
        doctest::Approx(0.5));
}

TEST_CASE("raising a negative score raises the loss, raising a positive lowers it") {
  Rng rng(8);
  std::vector<double> probs = random_simplex(rng, 6);
  Partition part = make_partition(probs, 0.9);
  std::vector<double> base(6);
  for (auto& s : base) s = rng.uniform(-2.0, 2.0);
  const double l0 = ambiguous_consistency_mean(row_tensor(base), {part}, 0.0).values()[0];

  for (int j : part.negative()) {
    auto bumped = base;
    bumped[static_cast<std::size_t>(j)] += 0.25;
    CHECK(ambiguous_consistency_mean(row_tensor(bumped), {part}, 0.0).values()[0] > l0);
  }
  for (int i : part.positive()) {
    auto bumped = base;
    bumped[static_cast<std::size_t>(i)] += 0.25;
    CHECK(ambiguous_consistency_mean(row_tensor(bumped), {part}, 0.0).values()[0] < l0);
  }
}

TEST_CASE("gradient signs split by set membership") {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const int k = 3 + rng.uniform_int(6);
    Partition part = make_partition(random_simplex(rng, k), 0.8);
    Tensor scores(1, k);
    for (auto& v : scores.values()) v = rng.uniform(-3.0, 3.0);
    scores.set_requires_grad(true);
    {
      Tape tape;
      tape.run_backward(ambiguous_consistency_mean(scores, {part}, 0.0));
    }
    for (int i : part.positive()) CHECK(scores.grad()[static_cast<std::size_t>(i)] < 0.0);
    for (int j : part.negative()) CHECK(scores.grad()[static_cast<std::size_t>(j)] > 0.0);
  }
}

TEST_CASE("loss depends on the sets, not the order inside them") {
  Rng rng(10);
  std::vector<double> probs = random_simplex(rng, 7);
  Partition part = make_partition(probs, 0.9);
  Tensor scores(1, 7);
  for (auto& v : scores.values()) v = rng.uniform(-2.0, 2.0);
  const double base = ambiguous_consistency_mean(scores, {part}, 0.0).values()[0];

  Partition shuffled = part;
  std::reverse(shuffled.order.begin(), shuffled.order.begin() + shuffled.m);
  std::reverse(shuffled.order.begin() + shuffled.m, shuffled.order.end());
  const double same = ambiguous_consistency_mean(scores, {shuffled}, 0.0).values()[0];
  CHECK(base == doctest::Approx(same).epsilon(1e-15));
}

TEST_CASE("margin tightens the objective") {
  std::vector<double> probs = {0.6, 0.2, 0.1, 0.1};
  Partition part = make_partition(probs, 0.75);
  Tensor scores = Tensor::row({2.0, 1.5, -1.0, -0.5});
  const double l0 = ambiguous_consistency_mean(scores, {part}, 0.0).values()[0];
  const double l1 = ambiguous_consistency_mean(scores, {part}, 1.0).values()[0];
  CHECK(l1 > l0);
  // still an upper bound on the margin hinge
  CHECK(l1 >= hinge_oracle(scores.values(), part, 1.0) - 1e-12);
  CHECK_THROWS_AS(ambiguous_consistency_mean(scores, {part}, -0.1), std::invalid_argument);
}

TEST_CASE("batched loss averages the per-row values") {
  std::vector<double> p1 = {0.5, 0.3, 0.15, 0.05};
  std::vector<double> p2 = {0.9, 0.04, 0.03, 0.03};
  Partition a = make_partition(p1, 0.9);
  Partition b = make_partition(p2, 0.9);
  Tensor one = Tensor::row({1.0, 0.5, -0.5, -1.0});
  Tensor two = Tensor::row({2.0, -1.0, 0.0, 0.5});
  Tensor both = Tensor::from_rows({{1.0, 0.5, -0.5, -1.0}, {2.0, -1.0, 0.0, 0.5}});
  const double la = ambiguous_consistency_mean(one, {a}, 0.0).values()[0];
  const double lb = ambiguous_consistency_mean(two, {b}, 0.0).values()[0];
  const double lab = ambiguous_consistency_mean(both, {a, b}, 0.0).values()[0];
  CHECK(lab == doctest::Approx(0.5 * (la + lb)).epsilon(1e-14));
}

}  // TEST_SUITE
