#include <gtest/gtest.h>

#include <cmath>

#include "vlalign/common.hpp"
#include "vlalign/ops.hpp"
#include "vlalign/tensor.hpp"

namespace vlalign {
namespace {

// direct high-precision evaluation, independent of the library path
std::vector<double> softmax_oracle(const std::vector<double>& x) {
  long double z = 0.0L;
  for (double v : x) z += std::exp(static_cast<long double>(v));
  std::vector<double> out;
  for (double v : x) out.push_back(static_cast<double>(std::exp(static_cast<long double>(v)) / z));
  return out;
}

TEST(Softmax, UniformOnEqualInputs) {
  Tensor x = Tensor::from_flat({2}, {0.0, 0.0});
  Tensor y = softmax(x, 0);
  EXPECT_DOUBLE_EQ(y(0), 0.5);
  EXPECT_DOUBLE_EQ(y(1), 0.5);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
  Tensor x = Tensor::from_flat({3}, {1000.0, 1000.0, 1000.0});
  Tensor y = softmax(x, 0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y(i), 1.0 / 3.0, 1e-12);
}

TEST(Softmax, MatchesDirectEvaluation) {
  Tensor x = Tensor::from_flat({3}, {1.0, 2.0, 3.0});
  Tensor y = softmax(x, 0);
  auto expect = softmax_oracle({1.0, 2.0, 3.0});
  EXPECT_NEAR(y(0), 0.09003, 1e-5);
  EXPECT_NEAR(y(1), 0.24473, 1e-5);
  EXPECT_NEAR(y(2), 0.66524, 1e-5);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y(i), expect[static_cast<size_t>(i)], 1e-12);
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(41);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 2 + rng.uniform_int(9);
    std::vector<double> v(static_cast<size_t>(n));
    for (double& e : v) e = rng.uniform(-50.0, 50.0);
    Tensor y = softmax(Tensor::from_flat({n}, v), 0);
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      EXPECT_GE(y(i), 0.0);
      s += y(i);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Softmax, EmptyAxisErrors) {
  EXPECT_THROW(Tensor::from_flat({0}, {}), std::invalid_argument);
  Tensor x = Tensor::from_flat({2, 2}, {1.0, 2.0, 3.0, 4.0});
  EXPECT_THROW(softmax(x, 2), std::invalid_argument);
}

TEST(Softmax, MatrixAxes) {
  Tensor x = Tensor::from_flat({2, 2}, {0.0, 0.0, std::log(3.0), 0.0});
  Tensor rows = softmax(x, 1);
  EXPECT_NEAR(rows(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(rows(1, 0), 0.75, 1e-12);
  Tensor cols = softmax(x, 0);
  EXPECT_NEAR(cols(0, 0) + cols(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(cols(1, 0), 0.75, 1e-12);
}

TEST(LayerNorm, ConstantRowIsZeroedByEpsilon) {
  Tensor x = Tensor::from_flat({4}, {1.0, 1.0, 1.0, 1.0});
  Tensor gain(std::vector<int>{4}, 1.0);
  Tensor bias(std::vector<int>{4}, 0.0);
  Tensor y = layer_norm(x, gain, bias);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y(i), 0.0, 1e-12);
}

TEST(LayerNorm, AlreadyNormalizedPair) {
  Tensor x = Tensor::from_flat({2}, {-1.0, 1.0});
  Tensor gain(std::vector<int>{2}, 1.0);
  Tensor bias(std::vector<int>{2}, 0.0);
  Tensor y = layer_norm(x, gain, bias);
  EXPECT_NEAR(y(0), -1.0, 1e-2);
  EXPECT_NEAR(y(1), 1.0, 1e-2);
}

TEST(LayerNorm, GainAndBiasSetMomentsClosedForm) {
  Tensor x = Tensor::from_flat({4}, {1.0, 2.0, 3.0, 4.0});
  Tensor gain(std::vector<int>{4}, 2.0);
  Tensor bias(std::vector<int>{4}, 1.0);
  Tensor y = layer_norm(x, gain, bias);
  double mean = 0.0;
  for (int i = 0; i < 4; ++i) mean += y(i);
  mean /= 4.0;
  double var = 0.0;
  for (int i = 0; i < 4; ++i) var += (y(i) - mean) * (y(i) - mean);
  var /= 4.0;
  EXPECT_NEAR(mean, 1.0, 1e-9);
  EXPECT_NEAR(var, 4.0, 1e-3);
}

TEST(LayerNorm, MeanZeroVarianceOneUnderUnitGain) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + rng.uniform_int(14);
    std::vector<double> v(static_cast<size_t>(n));
    for (double& e : v) e = rng.uniform(-5.0, 5.0);
    Tensor gain(std::vector<int>{n}, 1.0);
    Tensor bias(std::vector<int>{n}, 0.0);
    Tensor y = layer_norm(Tensor::from_flat({n}, v), gain, bias);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += y(i);
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (y(i) - mean) * (y(i) - mean);
    var /= n;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(LayerNorm, ShortInputErrors) {
  Tensor g(std::vector<int>{1}, 1.0);
  EXPECT_THROW(layer_norm(Tensor::from_flat({1}, {3.0}), g, g), std::invalid_argument);
}

TEST(KlDivergence, IdenticalDistributionsGiveZero) {
  Tensor p = Tensor::from_flat({2}, {0.5, 0.5});
  EXPECT_NEAR(kl_divergence(p, p).value(), 0.0, 1e-12);
}

TEST(KlDivergence, ClosedFormAgainstUniform) {
  Tensor p = Tensor::from_flat({2}, {1.0, 0.0});
  Tensor q = Tensor::from_flat({2}, {0.5, 0.5});
  EXPECT_NEAR(kl_divergence(p, q).value(), std::log(2.0), 1e-4);
}

TEST(KlDivergence, FlooringRuleEvaluatedByHand) {
  // q = [1, 0] -> floored [1, 1e-8] -> renormalized by z = 1 + 1e-8
  const double z = 1.0 + 1e-8;
  const double expected = 0.5 * std::log(0.5 * z / 1.0) + 0.5 * std::log(0.5 * z / 1e-8);
  Tensor p = Tensor::from_flat({2}, {0.5, 0.5});
  Tensor q = Tensor::from_flat({2}, {1.0, 0.0});
  EXPECT_NEAR(kl_divergence(p, q).value(), expected, 1e-9);
}

TEST(KlDivergence, NegativeEntriesError) {
  Tensor p = Tensor::from_flat({2}, {1.5, -0.5});
  Tensor q = Tensor::from_flat({2}, {0.5, 0.5});
  EXPECT_THROW(kl_divergence(p, q), std::invalid_argument);
  EXPECT_THROW(kl_divergence(q, p), std::invalid_argument);
}

TEST(KlDivergence, NonStochasticInputsError) {
  Tensor p = Tensor::from_flat({2}, {0.7, 0.7});
  Tensor q = Tensor::from_flat({2}, {0.5, 0.5});
  EXPECT_THROW(kl_divergence(p, q), std::invalid_argument);
}

TEST(KlDivergence, NonNegativeOnRandomStochasticVectors) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 2 + rng.uniform_int(6);
    std::vector<double> p(static_cast<size_t>(n)), q(static_cast<size_t>(n));
    double sp = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      p[static_cast<size_t>(i)] = rng.uniform(1e-3, 1.0);
      q[static_cast<size_t>(i)] = rng.uniform(1e-3, 1.0);
      sp += p[static_cast<size_t>(i)];
      sq += q[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i) {
      p[static_cast<size_t>(i)] /= sp;
      q[static_cast<size_t>(i)] /= sq;
    }
    Tensor tp = Tensor::from_flat({n}, p);
    Tensor tq = Tensor::from_flat({n}, q);
    EXPECT_GE(kl_divergence(tp, tq).value(), 0.0);
    EXPECT_NEAR(kl_divergence(tp, tp).value(), 0.0, 1e-12);
  }
}

TEST(CrossEntropy, UniformLogits) {
  Tensor x = Tensor::from_flat({2}, {0.0, 0.0});
  EXPECT_NEAR(cross_entropy(x, 0).value(), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrectLogit) {
  Tensor x = Tensor::from_flat({2}, {10.0, -10.0});
  // loss = log(1 + exp(-20))
  EXPECT_NEAR(cross_entropy(x, 0).value(), std::log1p(std::exp(-20.0)), 1e-15);
  EXPECT_NEAR(cross_entropy(x, 0).value(), 2.06e-9, 5e-11);
}

TEST(CrossEntropy, MatchesSoftmaxOracle) {
  Tensor x = Tensor::from_flat({3}, {1.0, 2.0, 3.0});
  auto probs = softmax_oracle({1.0, 2.0, 3.0});
  EXPECT_NEAR(cross_entropy(x, 2).value(), -std::log(probs[2]), 1e-12);
  EXPECT_NEAR(cross_entropy(x, 2).value(), 0.40761, 1e-5);
}

TEST(CrossEntropy, OutOfRangeLabelErrors) {
  Tensor x = Tensor::from_flat({3}, {1.0, 2.0, 3.0});
  EXPECT_THROW(cross_entropy(x, 3), std::invalid_argument);
  EXPECT_THROW(cross_entropy(x, -1), std::invalid_argument);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from_flat({3}, {1.0, 2.0, 3.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = sum_all(x);
  tape.backward(loss);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[static_cast<size_t>(i)], 1.0);
}

TEST(Backward, DotSquaredGradient) {
  Tensor x = Tensor::from_flat({2}, {1.0, 2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = dot(x, x);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossErrors) {
  Tensor x = Tensor::from_flat({2}, {1.0, 2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(Backward, EmptyRecordErrors) {
  Tensor loss = Tensor::scalar(1.0, true);
  Tape tape;
  EXPECT_THROW(tape.backward(loss), std::invalid_argument);
}

TEST(Backward, UnreachableParameterKeepsZeroGradient) {
  Tensor x = Tensor::from_flat({2}, {1.0, 2.0}, true);
  Tensor unused = Tensor::from_flat({2}, {5.0, 5.0}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = dot(x, x);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(unused.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(unused.grad()[1], 0.0);
}

TEST(Backward, AccumulationIsAdditiveAcrossUses) {
  Tensor x = Tensor::from_flat({2}, {3.0, 4.0}, true);
  Tape tape;
  TapeScope scope(tape);
  // loss = sum(x) + sum(x): each use contributes 1
  Tensor loss = add(sum_all(x), sum_all(x));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
}

TEST(Ops, NonFiniteResultsError) {
  Tensor big(std::vector<int>{2}, 1e308);
  EXPECT_THROW(add(big, big), std::runtime_error);
}

TEST(TopKSoftmax, FullKEqualsRowSoftmax) {
  Tensor scores = Tensor::from_flat({1, 4}, {0.3, -1.0, 2.0, 0.7});
  TopKSoftmax r = topk_row_softmax(scores, 4);
  Tensor full = softmax_rows(scores);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(r.probs(0, j), full(0, j), 1e-15);
}

TEST(TopKSoftmax, TiesKeepLowestIndex) {
  Tensor scores = Tensor::from_flat({1, 4}, {1.0, 1.0, 1.0, 1.0});
  TopKSoftmax r = topk_row_softmax(scores, 2);
  EXPECT_EQ(r.support[0], (std::vector<int>{0, 1}));
  EXPECT_NEAR(r.probs(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(r.probs(0, 1), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(r.probs(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(r.probs(0, 3), 0.0);
}

TEST(TopKSoftmax, BruteForceOracle) {
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 3 + rng.uniform_int(6);
    const int k = 1 + rng.uniform_int(n);
    std::vector<double> v(static_cast<size_t>(n));
    for (double& e : v) e = rng.uniform(-3.0, 3.0);
    TopKSoftmax r = topk_row_softmax(Tensor::from_flat({1, n}, v), k);
    // oracle: sort scores descending, keep first k indices, softmax over them
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return v[static_cast<size_t>(a)] > v[static_cast<size_t>(b)];
    });
    double z = 0.0;
    for (int i = 0; i < k; ++i) z += std::exp(v[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    double sum = 0.0;
    int support_size = 0;
    for (int j = 0; j < n; ++j) {
      if (r.probs(0, j) > 0.0) ++support_size;
      sum += r.probs(0, j);
    }
    EXPECT_EQ(support_size, k);
    EXPECT_NEAR(sum, 1.0, 1e-9);
    for (int i = 0; i < k; ++i) {
      const int idx = order[static_cast<size_t>(i)];
      EXPECT_NEAR(r.probs(0, idx), std::exp(v[static_cast<size_t>(idx)]) / z, 1e-9);
    }
  }
}

TEST(MaskedSoftmax, AllMaskedRowErrors) {
  Tensor x = Tensor::from_flat({1, 3}, {1.0, 2.0, 3.0});
  std::vector<unsigned char> mask = {0, 0, 0};
  EXPECT_THROW(masked_softmax_rows(x, &mask), std::invalid_argument);
}

TEST(MaskedSoftmax, MaskedColumnsGetZeroMass) {
  Tensor x = Tensor::from_flat({2, 3}, {5.0, 1.0, 1.0, 0.0, 0.0, 9.0});
  std::vector<unsigned char> mask = {1, 1, 0};
  Tensor y = masked_softmax_rows(x, &mask);
  EXPECT_DOUBLE_EQ(y(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(y(1, 2), 0.0);
  EXPECT_NEAR(y(0, 0) + y(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(y(1, 0), 0.5, 1e-12);
}

}  // namespace
}  // namespace vlalign
