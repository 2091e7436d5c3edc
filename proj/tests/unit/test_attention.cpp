#include <gtest/gtest.h>

#include <cmath>

#include "scriptid/attention.hpp"
#include "scriptid/gradcheck.hpp"
#include "test_util.hpp"

using namespace scriptid;
using scriptid::testing::fill_uniform;

namespace {

AttentionParams<double> random_attention(int hidden, int width, Rng& rng) {
  AttentionParams<double> p = AttentionParams<double>::zeros(hidden, width);
  fill_uniform(p.w, -1, 1, rng);
  fill_uniform(p.b, -1, 1, rng);
  fill_uniform(p.v, -1, 1, rng);
  return p;
}

}  // namespace

TEST(AttentionScores, ZeroReadoutGivesZeroScores) {
  Rng rng(1);
  AttentionParams<double> p = random_attention(5, 3, rng);
  p.v.setZero();
  Matrix<double> h(4, 5);
  fill_uniform(h, -1, 1, rng);
  EXPECT_EQ(attention_scores(h, p), Vector<double>::Zero(4));
}

TEST(AttentionScores, IdenticalRowsIdenticalScores) {
  Rng rng(2);
  const auto p = random_attention(5, 3, rng);
  Matrix<double> h(3, 5);
  fill_uniform(h, -1, 1, rng);
  h.row(2) = h.row(0);
  const auto q = attention_scores(h, p);
  EXPECT_EQ(q(0), q(2));
  EXPECT_NE(q(0), q(1));
}

TEST(AttentionScores, HandComputedToy) {
  AttentionParams<double> p = AttentionParams<double>::zeros(2, 2);
  p.w << 1.0, -0.5, 0.25, 2.0;
  p.b << 0.1, -0.2;
  p.v << 0.7, -1.3;
  Matrix<double> h(2, 2);
  h << 0.3, -0.6, 1.0, 0.5;
  const auto q = attention_scores(h, p);
  for (int d = 0; d < 2; ++d) {
    const double a0 = std::tanh(1.0 * h(d, 0) - 0.5 * h(d, 1) + 0.1);
    const double a1 = std::tanh(0.25 * h(d, 0) + 2.0 * h(d, 1) - 0.2);
    EXPECT_NEAR(q(d), 0.7 * a0 - 1.3 * a1, 1e-15);
  }
}

TEST(AttentionWeights, EqualScoresUniform) {
  const auto w = attention_weights<double>(Vector<double>::Constant(4, 1.7));
  for (int d = 0; d < 4; ++d) EXPECT_NEAR(w.p(d), 0.25, 1e-15);
}

TEST(AttentionWeights, ClosedFormPair) {
  Vector<double> q(2);
  q << std::log(1.0), std::log(3.0);
  const auto w = attention_weights(q);
  EXPECT_NEAR(w.p(0), 0.25, 1e-12);
  EXPECT_NEAR(w.p(1), 0.75, 1e-12);
}

TEST(AttentionWeights, ShiftInvariantAndMonotone) {
  Rng rng(3);
  Vector<double> q(6);
  fill_uniform(q, -3, 3, rng);
  const auto a = attention_weights(q);
  const auto b = attention_weights(Vector<double>(q.array() + 123.0));
  EXPECT_LT((a.p - b.p).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(a.p.sum(), 1.0, 1e-12);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (q(i) > q(j)) EXPECT_GT(a.p(i), a.p(j));
}

TEST(AttentionWeights, LargeScoresStayFinite) {
  Vector<double> q(3);
  q << 1000.0, 999.0, -1000.0;
  const auto w = attention_weights(q);
  EXPECT_TRUE(w.p.allFinite());
  EXPECT_NEAR(w.p.sum(), 1.0, 1e-12);
}

TEST(AttentionWeights, MaskedEntriesAreExactlyZero) {
  Vector<double> q(4);
  q << 0.5, 9.0, -0.5, 9.0;
  const auto w = attention_weights(q, {true, false, true, false});
  EXPECT_EQ(w.p(1), 0.0);
  EXPECT_EQ(w.p(3), 0.0);
  EXPECT_NEAR(w.p(0) + w.p(2), 1.0, 1e-12);
  const auto unmasked = attention_weights(Vector<double>(Vector<double>{{0.5, -0.5}}));
  EXPECT_NEAR(w.p(0), unmasked.p(0), 1e-15);

  Vector<double> dp(4);
  dp << 1, 2, 3, 4;
  const auto dq = attention_weights_backward(w, dp);
  EXPECT_EQ(dq(1), 0.0);
  EXPECT_EQ(dq(3), 0.0);
}

TEST(AttentionWeights, AllMaskedRejected) {
  EXPECT_THROW(attention_weights<double>(Vector<double>::Zero(2), {false, false}), InvalidInput);
  EXPECT_THROW(attention_weights<double>(Vector<double>::Zero(2), {true}), InvalidShape);
}

TEST(Attention, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const GradCheckReport r = check_attention_gradients(seed);
    EXPECT_TRUE(r.pass) << "seed " << seed << " max rel error " << r.max_rel_error;
    EXPECT_EQ(r.tensors_covered(), 3);
  }
}
