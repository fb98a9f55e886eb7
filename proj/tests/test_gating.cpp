#include <cmath>
#include <vector>

#include "doctest.h"
#include "leaf/gating.hpp"
#include "leaf/rng.hpp"

using namespace leaf;

namespace {

Tensor random_tensor(Rng& rng, int rows, int cols, double lo = -2.0, double hi = 2.0) {
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("gating") {

TEST_CASE("k equal to n keeps every expert strictly positive") {
  Rng rng(1);
  ExpertBank bank = ExpertBank::init(ExpertKind::linear, 4, 3, 3, 4, rng);
  Tensor x = random_tensor(rng, 5, 4);
  GateDecision d = gate(x, bank);
  for (int r = 0; r < d.weights.rows(); ++r) {
    double sum = 0.0;
    for (int c = 0; c < d.weights.cols(); ++c) {
      CHECK(d.weights.at(r, c) > 0.0);
      sum += d.weights.at(r, c);
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("k equal to one yields one-hot rows") {
  Rng rng(2);
  ExpertBank bank = ExpertBank::init(ExpertKind::linear, 4, 4, 1, 4, rng);
  Tensor x = random_tensor(rng, 6, 4);
  GateDecision d = gate(x, bank);
  for (int r = 0; r < d.weights.rows(); ++r) {
    int ones = 0, zeros = 0;
    for (int c = 0; c < d.weights.cols(); ++c) {
      if (d.weights.at(r, c) == 1.0) ++ones;
      if (d.weights.at(r, c) == 0.0) ++zeros;
    }
    CHECK(ones == 1);
    CHECK(zeros == 3);
  }
}

TEST_CASE("every gate row has exactly n-k zeros and unit mass") {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + rng.uniform_int(6);
    const int k = 1 + rng.uniform_int(n);
    const int width = 2 + rng.uniform_int(5);
    ExpertBank bank = ExpertBank::init(ExpertKind::linear, width, n, k, 4, rng);
    Tensor x = random_tensor(rng, 4, width, -4.0, 4.0);
    GateDecision d = gate(x, bank);
    for (int r = 0; r < d.weights.rows(); ++r) {
      int zeros = 0;
      double sum = 0.0;
      for (int c = 0; c < n; ++c) {
        const double w = d.weights.at(r, c);
        CHECK(w >= 0.0);
        if (w == 0.0) ++zeros;
        sum += w;
        CHECK((w > 0.0) == (d.active[static_cast<std::size_t>(r) * n + c] == 1));
      }
      CHECK(zeros == n - k);
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("permuting experts and gate columns permutes nothing observable") {
  Rng rng(4);
  for (ExpertKind kind : {ExpertKind::linear, ExpertKind::bottleneck, ExpertKind::residual}) {
    ExpertBank bank = ExpertBank::init(kind, 5, 3, 2, 2, rng);
    Tensor x = random_tensor(rng, 4, 5);

    ExpertBank permuted = bank;
    const int perm[3] = {2, 0, 1};
    permuted.experts.clear();
    permuted.gate_weight = Tensor(5, 3);
    for (int j = 0; j < 3; ++j) {
      permuted.experts.push_back(bank.experts[static_cast<std::size_t>(perm[j])]);
      for (int i = 0; i < 5; ++i) permuted.gate_weight.at(i, j) = bank.gate_weight.at(i, perm[j]);
    }
    permuted.gate_weight.set_requires_grad(true);

    Tensor a = fuse(x, bank);
    Tensor b = fuse(x, permuted);
    for (int i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
    }
  }
}

TEST_CASE("single identity linear expert passes input through") {
  Rng rng(5);
  ExpertBank bank = ExpertBank::init(ExpertKind::linear, 3, 1, 1, 4, rng);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) bank.experts[0].first.weight.at(i, j) = i == j ? 1.0 : 0.0;
  }
  for (auto& v : bank.experts[0].first.bias.values()) v = 0.0;
  Tensor x = random_tensor(rng, 4, 3);
  Tensor y = fuse(x, bank);
  for (int i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("identical experts make the gate weights irrelevant") {
  Rng rng(6);
  ExpertBank bank = ExpertBank::init(ExpertKind::bottleneck, 4, 3, 2, 2, rng);
  // clone expert 0's parameters into the others
  for (int j = 1; j < 3; ++j) {
    auto copy_into = [](const Tensor& src, Tensor dst) {
      for (int i = 0; i < src.size(); ++i) dst.values()[i] = src.values()[i];
    };
    copy_into(bank.experts[0].first.weight, bank.experts[static_cast<std::size_t>(j)].first.weight);
    copy_into(bank.experts[0].first.bias, bank.experts[static_cast<std::size_t>(j)].first.bias);
    copy_into(bank.experts[0].second.weight, bank.experts[static_cast<std::size_t>(j)].second.weight);
    copy_into(bank.experts[0].second.bias, bank.experts[static_cast<std::size_t>(j)].second.bias);
  }
  ExpertBank other_gate = bank;
  other_gate.gate_weight = random_tensor(rng, 4, 3);
  other_gate.gate_weight.set_requires_grad(true);

  Tensor x = random_tensor(rng, 5, 4);
  Tensor a = fuse(x, bank);
  Tensor b = fuse(x, other_gate);
  for (int i = 0; i < a.size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
}

TEST_CASE("residual expert with zeroed bottleneck is the identity") {
  Rng rng(7);
  ExpertBank bank = ExpertBank::init(ExpertKind::residual, 6, 2, 1, 4, rng);
  for (auto& e : bank.experts) {
    for (auto& v : e.first.weight.values()) v = 0.0;
    for (auto& v : e.first.bias.values()) v = 0.0;
    for (auto& v : e.second.weight.values()) v = 0.0;
    for (auto& v : e.second.bias.values()) v = 0.0;
  }
  Tensor x = random_tensor(rng, 3, 6);
  Tensor y = fuse(x, bank);
  for (int i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("fuse output keeps the input shape at both widths") {
  Rng rng(8);
  for (int width : {32, 7}) {  // feature width and class-count width
    ExpertBank bank = ExpertBank::init(ExpertKind::residual, width, 2, 1, 4, rng);
    Tensor x = random_tensor(rng, 3, width);
    Tensor y = fuse(x, bank);
    CHECK(y.rows() == 3);
    CHECK(y.cols() == width);
  }
}

TEST_CASE("fuse gradients match finite differences") {
  Rng rng(9);
  // smooth configuration: no masking (k == n), linear experts
  ExpertBank bank = ExpertBank::init(ExpertKind::linear, 4, 2, 2, 4, rng);
  Tensor weights = random_tensor(rng, 3, 4);
  Tensor x0 = random_tensor(rng, 3, 4);
  auto f = [&](const Tensor& t) { return sum_all(mul_elementwise(fuse(t, bank), weights)); };
  CHECK(grad_check(f, x0, 1e-4) < 1e-4);

  // parameter gradients through the same path
  for (Tensor* slot : {&bank.gate_weight, &bank.experts[0].first.weight,
                       &bank.experts[1].first.bias}) {
    Tensor original = *slot;
    auto fp = [&, slot](const Tensor& cand) {
      *slot = cand;
      Tensor out = sum_all(mul_elementwise(fuse(x0, bank), weights));
      *slot = original;
      return out;
    };
    CHECK(grad_check(fp, original, 1e-4) < 1e-4);
    *slot = original;
  }

  // masked configuration at an input whose gate margin dwarfs the stencil
  ExpertBank masked = ExpertBank::init(ExpertKind::linear, 2, 2, 1, 4, rng);
  masked.gate_weight.values()[0] = 2.0;
  masked.gate_weight.values()[1] = -2.0;
  masked.gate_weight.values()[2] = 0.0;
  masked.gate_weight.values()[3] = 0.0;
  Tensor far = Tensor::from_rows({{1.5, 0.3}, {-1.2, 0.8}});
  auto fm = [&](const Tensor& t) { return sum_all(fuse(t, masked)); };
  CHECK(grad_check(fm, far, 1e-4) < 1e-4);
}

TEST_CASE("construction rejects bad arguments") {
  Rng rng(10);
  CHECK_THROWS_AS(ExpertBank::init(ExpertKind::linear, 4, 2, 3, 4, rng), std::invalid_argument);
  CHECK_THROWS_AS(ExpertBank::init(ExpertKind::linear, 4, 0, 1, 4, rng), std::invalid_argument);
  ExpertBank bank = ExpertBank::init(ExpertKind::linear, 4, 2, 1, 4, rng);
  Tensor bad = random_tensor(rng, 2, 5);
  CHECK_THROWS_AS(gate(bad, bank), std::invalid_argument);
  CHECK_THROWS_AS(expert_kind_from_string("conv"), std::invalid_argument);
}

}  // TEST_SUITE
