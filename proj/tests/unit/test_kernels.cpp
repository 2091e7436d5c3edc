#include <gtest/gtest.h>

#include <limits>

#include "scriptid/kernels.hpp"
#include "test_util.hpp"

using namespace scriptid;
using scriptid::testing::fill_uniform;

namespace {

FeatureMaps<double> random_maps(int c, int h, int w, int n, Rng& rng) {
  FeatureMaps<double> m(c, h, w, n);
  fill_uniform(m.data, -1.0, 1.0, rng);
  return m;
}

double max_abs_diff(const Matrix<double>& a, const Matrix<double>& b) {
  EXPECT_EQ(a.rows(), b.rows());
  EXPECT_EQ(a.cols(), b.cols());
  return (a - b).cwiseAbs().maxCoeff();
}

struct ThreadGuard {
  ~ThreadGuard() { set_num_threads(1); }
};

}  // namespace

TEST(KernelShapes, ConvOutputSizes) {
  EXPECT_EQ(conv_output_size(32, {5, 1, 0}), 28);
  EXPECT_EQ(conv_output_size(15, {3, 1, 0}), 13);
  EXPECT_EQ(conv_output_size(7, {3, 1, 0}), 5);
  EXPECT_EQ(conv_output_size(3, {1, 1, 0}), 3);
}

TEST(KernelShapes, CeilModePoolSizes) {
  const PoolGeometry g{3, 2, 1};
  EXPECT_EQ(pool_output_size(28, g), 15);
  EXPECT_EQ(pool_output_size(13, g), 7);
  EXPECT_EQ(pool_output_size(5, g), 3);
}

TEST(Conv, ZeroInputZeroBiasGivesZero) {
  FeatureMaps<double> in(3, 32, 32, 2);
  Rng rng(1);
  Matrix<double> w(4, 75);
  fill_uniform(w, -1, 1, rng);
  const auto out = kernels::conv2d_forward<double>(in, w, Vector<double>::Zero(4), {5, 1, 0});
  EXPECT_EQ(out.channels, 4);
  EXPECT_EQ(out.height, 28);
  EXPECT_EQ(out.width, 28);
  EXPECT_EQ(out.data.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Conv, IdentityOneByOneKernel) {
  Rng rng(2);
  const auto in = random_maps(1, 3, 3, 1, rng);
  Matrix<double> w(1, 1);
  w(0, 0) = 1.0;
  const auto out = kernels::conv2d_forward<double>(in, w, Vector<double>::Zero(1), {1, 1, 0});
  EXPECT_EQ(out.data, in.data);
}

TEST(Conv, StandardConv1Shape) {
  FeatureMaps<float> in(3, 32, 32, 1);
  const auto out = kernels::conv2d_forward<float>(in, Matrix<float>(96, 75), Vector<float>::Zero(96), {5, 1, 0});
  EXPECT_EQ(out.channels, 96);
  EXPECT_EQ(out.height, 28);
  EXPECT_EQ(out.width, 28);
}

TEST(Conv, RejectsMismatchedWeights) {
  FeatureMaps<double> in(3, 8, 8, 1);
  EXPECT_THROW(kernels::conv2d_forward<double>(in, Matrix<double>(2, 10), Vector<double>::Zero(2), {3, 1, 0}), InvalidShape);
  EXPECT_THROW(kernels::conv2d_forward<double>(in, Matrix<double>(2, 27), Vector<double>::Zero(3), {3, 1, 0}), InvalidShape);
  FeatureMaps<double> tiny(3, 2, 2, 1);
  EXPECT_THROW(kernels::conv2d_forward<double>(tiny, Matrix<double>(2, 27), Vector<double>::Zero(2), {3, 1, 0}), InvalidShape);
}

TEST(Conv, MatchesReferenceForwardAndBackward) {
  Rng rng(3);
  for (const ConvGeometry g : {ConvGeometry{5, 1, 0}, ConvGeometry{3, 1, 0}, ConvGeometry{3, 2, 1}, ConvGeometry{1, 1, 0}}) {
    const auto in = random_maps(3, 11, 9, 19, rng);  // 19 patches: spans several chunks
    Matrix<double> w(5, 3 * g.kernel * g.kernel);
    Vector<double> b(5);
    fill_uniform(w, -1, 1, rng);
    fill_uniform(b, -1, 1, rng);
    const auto fast = kernels::conv2d_forward(in, w, b, g);
    const auto ref = reference::conv2d_forward(in, w, b, g);
    EXPECT_LT(max_abs_diff(fast.data, ref.data), 1e-12);

    FeatureMaps<double> go(5, fast.height, fast.width, fast.count);
    fill_uniform(go.data, -1, 1, rng);
    Matrix<double> gw1 = Matrix<double>::Zero(w.rows(), w.cols()), gw2 = gw1;
    Vector<double> gb1 = Vector<double>::Zero(5), gb2 = gb1;
    const auto gi1 = kernels::conv2d_backward(in, w, g, go, gw1, gb1);
    const auto gi2 = reference::conv2d_backward(in, w, g, go, gw2, gb2);
    EXPECT_LT(max_abs_diff(gi1.data, gi2.data), 1e-12);
    EXPECT_LT(max_abs_diff(gw1, gw2), 1e-10);
    EXPECT_LT((gb1 - gb2).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Conv, ThreadedMatchesSerial) {
  ThreadGuard guard;
  Rng rng(4);
  const auto in = random_maps(3, 32, 32, 20, rng);
  Matrix<double> w(6, 75);
  fill_uniform(w, -1, 1, rng);
  const Vector<double> b = Vector<double>::Zero(6);
  set_num_threads(1);
  const auto serial = kernels::conv2d_forward(in, w, b, {5, 1, 0});
  set_num_threads(3);
  const auto threaded = kernels::conv2d_forward(in, w, b, {5, 1, 0});
  EXPECT_LT(max_abs_diff(serial.data, threaded.data), 1e-12);
}

TEST(Pool, ConstantFieldStaysConstant) {
  FeatureMaps<double> in(2, 28, 28, 3);
  in.data.setConstant(-0.7);
  const auto out = kernels::maxpool_forward(in, {3, 2, 1}, nullptr);
  EXPECT_EQ(out.height, 15);
  EXPECT_EQ(out.width, 15);
  EXPECT_EQ(out.data.maxCoeff(), -0.7);
  EXPECT_EQ(out.data.minCoeff(), -0.7);
}

TEST(Pool, PaddingNeverWinsOverNegativeValues) {
  // All real values negative: a zero-padded border would leak 0 into the corners.
  FeatureMaps<double> in(1, 5, 5, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) in.at(0, 0, y, x) = -1.0 - y * 5 - x;
  const auto out = kernels::maxpool_forward(in, {3, 2, 1}, nullptr);
  ASSERT_EQ(out.height, 3);
  EXPECT_EQ(out.at(0, 0, 0, 0), -1.0);   // window rows 0..1, cols 0..1
  EXPECT_EQ(out.at(0, 0, 2, 2), -19.0);  // window rows 3..4, cols 3..4: best is (3,3)
}

TEST(Pool, MatchesReferenceForwardAndBackward) {
  Rng rng(5);
  for (int size : {28, 13, 5, 7, 4}) {
    const auto in = random_maps(3, size, size + 1, 4, rng);
    PoolIndices i1, i2;
    const auto a = kernels::maxpool_forward(in, {3, 2, 1}, &i1);
    const auto b = reference::maxpool_forward(in, {3, 2, 1}, &i2);
    EXPECT_EQ(a.data, b.data);
    EXPECT_EQ(i1.argmax, i2.argmax);
    FeatureMaps<double> go(a.channels, a.height, a.width, a.count);
    fill_uniform(go.data, -1, 1, rng);
    EXPECT_EQ(kernels::maxpool_backward(go, i1).data, reference::maxpool_backward(go, i2).data);
  }
}

TEST(BatchNorm, AlreadyNormalizedBatchPassesThrough) {
  // Every channel holds the values -1 and +1 equally often: mean 0, biased variance 1.
  FeatureMaps<double> in(2, 2, 2, 2);
  for (Index j = 0; j < in.data.cols(); ++j) {
    in.data(0, j) = j % 2 ? 1.0 : -1.0;
    in.data(1, j) = j < 4 ? 1.0 : -1.0;
  }
  BatchNormParams<double> p(2);
  const auto out = kernels::batchnorm_forward<double>(in, p, Mode::train, nullptr);
  EXPECT_LT((out.data - in.data).cwiseAbs().maxCoeff(), 10 * p.epsilon);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(6);
  const auto in = random_maps(3, 4, 4, 5, rng);
  BatchNormParams<double> p(3);
  p.gamma.setZero();
  p.beta << 0.5, -2.0, 3.0;
  for (Mode mode : {Mode::train, Mode::eval}) {
    const auto out = kernels::batchnorm_forward<double>(in, p, mode, nullptr);
    for (int c = 0; c < 3; ++c) {
      EXPECT_EQ(out.data.row(c).minCoeff(), p.beta(c));
      EXPECT_EQ(out.data.row(c).maxCoeff(), p.beta(c));
    }
  }
}

TEST(BatchNorm, EvalModeIsDeterministicAndUsesRunningStats) {
  Rng rng(7);
  const auto in = random_maps(2, 3, 3, 4, rng);
  BatchNormParams<double> p(2);
  p.running_mean << 0.25, -0.5;
  p.running_var << 4.0, 0.25;
  const auto a = kernels::batchnorm_forward<double>(in, p, Mode::eval, nullptr);
  const auto b = kernels::batchnorm_forward<double>(in, p, Mode::eval, nullptr);
  EXPECT_EQ(a.data, b.data);
  EXPECT_NEAR(a.data(0, 3), (in.data(0, 3) - 0.25) / std::sqrt(4.0 + p.epsilon), 1e-12);
  EXPECT_NEAR(a.data(1, 5), (in.data(1, 5) + 0.5) / std::sqrt(0.25 + p.epsilon), 1e-12);
  EXPECT_EQ(p.running_mean(0), 0.25);
}

TEST(BatchNorm, TrainModeUpdatesRunningStatsWithMomentum) {
  FeatureMaps<double> in(1, 1, 2, 2);
  in.data << 1.0, 3.0, 5.0, 7.0;  // mean 4, unbiased variance 20/3
  BatchNormParams<double> p(1);
  kernels::batchnorm_forward<double>(in, p, Mode::train, nullptr);
  EXPECT_NEAR(p.running_mean(0), 0.1 * 4.0, 1e-12);
  EXPECT_NEAR(p.running_var(0), 0.9 * 1.0 + 0.1 * 20.0 / 3.0, 1e-12);
}

TEST(BatchNorm, TrainModeNeedsTwoPatches) {
  FeatureMaps<double> in(2, 4, 4, 1);
  BatchNormParams<double> p(2);
  EXPECT_THROW(kernels::batchnorm_forward<double>(in, p, Mode::train, nullptr), ConfigurationError);
  EXPECT_NO_THROW(kernels::batchnorm_forward<double>(in, p, Mode::eval, nullptr));
}

TEST(BatchNorm, MatchesReferenceForwardAndBackward) {
  Rng rng(8);
  const auto in = random_maps(4, 5, 5, 6, rng);
  for (Mode mode : {Mode::train, Mode::eval}) {
    BatchNormParams<double> p1(4);
    fill_uniform(p1.gamma, 0.5, 1.5, rng);
    fill_uniform(p1.beta, -0.5, 0.5, rng);
    fill_uniform(p1.running_mean, -0.5, 0.5, rng);
    fill_uniform(p1.running_var, 0.5, 1.5, rng);
    BatchNormParams<double> p2 = p1;
    BatchNormCache<double> c1, c2;
    const auto a = kernels::batchnorm_forward(in, p1, mode, &c1);
    const auto b = reference::batchnorm_forward(in, p2, mode, &c2);
    EXPECT_LT(max_abs_diff(a.data, b.data), 1e-12);
    EXPECT_LT((p1.running_var - p2.running_var).cwiseAbs().maxCoeff(), 1e-12);
    FeatureMaps<double> go(4, 5, 5, 6);
    fill_uniform(go.data, -1, 1, rng);
    Vector<double> gg1 = Vector<double>::Zero(4), gb1 = gg1, gg2 = gg1, gb2 = gg1;
    const auto d1 = kernels::batchnorm_backward(go, p1, c1, gg1, gb1);
    const auto d2 = reference::batchnorm_backward(go, p2, c2, gg2, gb2);
    EXPECT_LT(max_abs_diff(d1.data, d2.data), 1e-12);
    EXPECT_LT((gg1 - gg2).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((gb1 - gb2).cwiseAbs().maxCoeff(), 1e-12);
  }
}
