#include <gtest/gtest.h>

#include <cmath>

#include "scriptid/fusion.hpp"
#include "scriptid/gradcheck.hpp"
#include "test_util.hpp"

using namespace scriptid;
using scriptid::testing::fill_uniform;

namespace {

FusionParams<double> random_fusion(int hidden, int feature, int width, Rng& rng) {
  FusionParams<double> p = FusionParams<double>::zeros(hidden, feature, width, true);
  p.visit("", [&](const std::string&, ParamKind, std::vector<int>, auto& t) { fill_uniform(t, -1, 1, rng); });
  return p;
}

}  // namespace

TEST(LocalFeatures, ZeroWeightAnnihilates) {
  Rng rng(1);
  Matrix<double> y(3, 4);
  fill_uniform(y, -1, 1, rng);
  Vector<double> p(3);
  p << 0.4, 0.0, 0.6;
  const auto lf = local_features(p, y);
  EXPECT_EQ(lf.row(1), Matrix<double>::Zero(1, 4));
  EXPECT_EQ(lf.row(0), 0.4 * y.row(0));
}

TEST(LocalFeatures, UniformScalingAndSinglePatch) {
  Rng rng(2);
  Matrix<double> y(5, 3);
  fill_uniform(y, -1, 1, rng);
  const auto lf = local_features<double>(Vector<double>::Constant(5, 0.2), y);
  EXPECT_LT((lf - y / 5.0).cwiseAbs().maxCoeff(), 1e-15);
  const Matrix<double> one = y.topRows(1);
  EXPECT_EQ(local_features<double>(Vector<double>::Ones(1), one), one);
}

TEST(GlobalFeature, ZeroCellZeroBias) {
  Rng rng(3);
  FusionParams<double> p = random_fusion(6, 4, 3, rng);
  p.projection_bias.setZero();
  EXPECT_EQ(global_feature<double>(Vector<double>::Zero(6), p), Vector<double>::Zero(4));
}

TEST(GlobalFeature, DeterministicAndBounded) {
  Rng rng(4);
  const FusionParams<double> p = random_fusion(6, 4, 3, rng);
  Vector<double> c(6);
  fill_uniform(c, -5, 5, rng);
  const auto a = global_feature(c, p);
  EXPECT_EQ(a, global_feature(c, p));
  EXPECT_LT(a.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Coherence, EqualScoresSplitEvenly) {
  const auto c = coherence_from_scores(0.8, 0.8);
  EXPECT_EQ(c.local, 0.5);
  EXPECT_EQ(c.global, 0.5);
}

TEST(Coherence, ZeroReadoutSplitsEvenly) {
  Rng rng(5);
  FusionParams<double> p = random_fusion(6, 4, 3, rng);
  p.local.w_out.setZero();
  p.global.w_out.setZero();
  Vector<double> a(4), b(4);
  fill_uniform(a, -1, 1, rng);
  fill_uniform(b, -1, 1, rng);
  const auto c = coherence_scores(a, b, p);
  EXPECT_DOUBLE_EQ(c.local, 0.5);
  EXPECT_DOUBLE_EQ(c.global, 0.5);
}

TEST(Coherence, ClosedFormPair) {
  const auto c = coherence_from_scores(std::log(1.0), std::log(3.0));
  EXPECT_NEAR(c.local, 0.25, 1e-12);
  EXPECT_NEAR(c.global, 0.75, 1e-12);
  const auto far = coherence_from_scores(800.0, -800.0);
  EXPECT_TRUE(std::isfinite(far.local) && std::isfinite(far.global));
  EXPECT_NEAR(far.local + far.global, 1.0, 1e-15);
}

TEST(Coherence, ScorerMatchesDefinition) {
  Rng rng(6);
  const FusionParams<double> p = random_fusion(6, 4, 3, rng);
  Vector<double> f(4);
  fill_uniform(f, -1, 1, rng);
  const double expected = p.local.w_out.dot((p.local.w_hidden * f + p.local.b_hidden).array().tanh().matrix());
  EXPECT_NEAR(branch_score(f, p.local), expected, 1e-14);
}

TEST(Fuse, SaturatedCoherenceSelectsLocal) {
  Rng rng(7);
  Vector<double> lf(4), gf(4);
  fill_uniform(lf, -1, 1, rng);
  fill_uniform(gf, -1, 1, rng);
  const auto phi = fuse(lf, gf, coherence_from_scores(30.0, 0.0));
  EXPECT_LT((phi - lf).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Fuse, HalfAndHalfIsTheMidpoint) {
  Rng rng(8);
  Vector<double> lf(4), gf(4);
  fill_uniform(lf, -1, 1, rng);
  fill_uniform(gf, -1, 1, rng);
  const auto phi = fuse(lf, gf, Coherence<double>{0.5, 0.5});
  EXPECT_LT((phi - (lf + gf) / 2).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(fuse(lf, lf, Coherence<double>{0.3, 0.7}), lf);
}

TEST(FuseDynamic, ConvexEnvelopeAndSharedGlobal) {
  Rng rng(9);
  const FusionParams<double> p = random_fusion(6, 4, 3, rng);
  Matrix<double> local(5, 4);
  fill_uniform(local, -1, 1, rng);
  Vector<double> c(6);
  fill_uniform(c, -1, 1, rng);
  const Vector<double> gf = global_feature(c, p);
  FusionTrace<double> tr;
  const Matrix<double> phi = fuse_dynamic(local, gf, p, &tr);
  EXPECT_EQ(tr.global, gf);
  for (int d = 0; d < 5; ++d) {
    EXPECT_NEAR(tr.c_local(d) + tr.c_global(d), 1.0, 1e-12);
    for (int j = 0; j < 4; ++j) {
      EXPECT_GE(phi(d, j), std::min(local(d, j), gf(j)) - 1e-12);
      EXPECT_LE(phi(d, j), std::max(local(d, j), gf(j)) + 1e-12);
    }
  }
}

TEST(FuseConcat, LayoutIsLocalThenGlobal) {
  Matrix<double> local(2, 2);
  local << 1, 2, 3, 4;
  Vector<double> gf(2);
  gf << 9, 8;
  Matrix<double> expected(2, 4);
  expected << 1, 2, 9, 8, 3, 4, 9, 8;
  EXPECT_EQ(fuse_concat(local, gf), expected);
}

TEST(Fusion, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const GradCheckReport r = check_fusion_gradients(seed);
    EXPECT_TRUE(r.pass) << "seed " << seed << " max rel error " << r.max_rel_error;
    EXPECT_EQ(r.tensors_covered(), 8);
  }
}
