#include <gtest/gtest.h>

#include <set>

#include "scriptid/gradcheck.hpp"
#include "scriptid/model.hpp"
#include "scriptid/trainer.hpp"
#include "test_util.hpp"

using namespace scriptid;
using scriptid::testing::fill_uniform;

namespace {

std::set<std::string> names_of(ModelParams<double>& m) {
  std::set<std::string> out;
  for (const auto& t : m.tensors()) out.insert(t.name);
  return out;
}

Batch<double> slice(const Batch<double>& b, int sample) {
  Batch<double> out;
  int offset = 0;
  for (int i = 0; i < sample; ++i) offset += b.lengths[static_cast<size_t>(i)];
  const int len = b.lengths[static_cast<size_t>(sample)];
  out.patches = FeatureMaps<double>(b.patches.channels, 32, 32, len);
  out.patches.data = b.patches.data.middleCols(Index(offset) * 1024, Index(len) * 1024);
  out.lengths = {len};
  out.labels = {b.labels[static_cast<size_t>(sample)]};
  return out;
}

}  // namespace

TEST(Model, TensorNamesPerVariant) {
  const ModelDims dims = ModelDims::tiny(3);
  auto full = ModelParams<double>::zeros(dims, Variant::full);
  auto v1 = ModelParams<double>::zeros(dims, Variant::variant1);
  auto v2 = ModelParams<double>::zeros(dims, Variant::variant2);
  const auto nf = names_of(full), n1 = names_of(v1), n2 = names_of(v2);
  for (const char* n : {"encoder.conv1.kernels", "encoder.bn4.running_var", "encoder.fc2.weights",
                        "lstm.layer1.w_xi", "lstm.layer2.w_co", "attention.w", "attention.v",
                        "fusion.global_projection.weights", "fusion.local.W", "fusion.global.w", "head.weights"}) {
    EXPECT_TRUE(nf.count(n)) << n;
  }
  EXPECT_FALSE(n1.count("attention.w"));
  EXPECT_FALSE(n1.count("fusion.local.W"));
  EXPECT_TRUE(n2.count("attention.w"));
  EXPECT_FALSE(n2.count("fusion.local.W"));
  EXPECT_EQ(full.head.w.cols(), dims.feature);
  EXPECT_EQ(v1.head.w.cols(), 2 * dims.feature);
  EXPECT_EQ(v2.head.w.cols(), 2 * dims.feature);
  EXPECT_EQ(nf.size(), full.tensors().size());  // names are unique
}

TEST(Model, StandardParameterCountByHand) {
  const int n = 13;
  const std::int64_t conv = (96 * 3 * 25 + 96) + (256 * 96 * 9 + 256) + (384 * 256 * 9 + 384) + (512 * 384 + 512);
  const std::int64_t bn = 2 * (96 + 256 + 384 + 512);
  const std::int64_t fc = (4096LL * 4608 + 4096) + (256 * 4096 + 256);
  const auto lstm = [](std::int64_t in) { return 4 * 512 * in + 4 * 512 * 512 + 3 * 512 + 4 * 512; };
  const std::int64_t attention = 256 * 512 + 256 + 256;
  const std::int64_t fusion = (256 * 512 + 256) + 2 * (256 * 256 + 256 + 256);
  const std::int64_t head = n * 256 + n;
  const std::int64_t expected = conv + bn + fc + lstm(256) + lstm(512) + attention + fusion + head;
  const auto m = ModelParams<float>::zeros(ModelDims::standard(n), Variant::full);
  EXPECT_EQ(m.parameter_count(), expected);
  EXPECT_GT(m.parameter_count(), 12'000'000);  // fc1 alone is ~18.9M
}

TEST(Model, Variant1UsesUniformAttention) {
  Rng rng(1);
  ModelParams<double> m = random_model(ModelDims::tiny(3), Variant::variant1, rng);
  Matrix<double> y(5, 8);
  fill_uniform(y, -1, 1, rng);
  const auto s = forward_sequence(m, y);
  EXPECT_LT((s.weights.p.array() - 0.2).abs().maxCoeff(), 1e-15);
  EXPECT_EQ(s.fused.cols(), 16);
}

TEST(Model, FullAndVariant2ShareAttention) {
  Rng rng(2);
  const ModelDims dims = ModelDims::tiny(3);
  ModelParams<double> full = random_model(dims, Variant::full, rng);
  ModelParams<double> v2 = random_model(dims, Variant::variant2, rng);
  v2.encoder = full.encoder;
  v2.lstm = full.lstm;
  v2.attention = full.attention;
  Matrix<double> y(6, dims.feature);
  fill_uniform(y, -1, 1, rng);
  const auto a = forward_sequence(full, y);
  const auto b = forward_sequence(v2, y);
  EXPECT_EQ(a.weights.p, b.weights.p);
  EXPECT_NE(a.dist.z, b.dist.z);
}

TEST(Model, NormalizationOnRandomInputs) {
  Rng rng(3);
  for (Variant v : {Variant::full, Variant::variant1, Variant::variant2}) {
    ModelParams<double> m = random_model(ModelDims::tiny(4), v, rng);
    const Batch<double> b = random_batch(3, 4, 3, 4, rng);
    const auto dists = forward(m, b, ForwardOptions{});
    for (const auto& d : dists) {
      EXPECT_NEAR(d.z.sum(), 1.0, 1e-12);
      EXPECT_LT((d.per_patch.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Model, BatchOfOneMatchesSampleInsideBatchOfFour) {
  Rng rng(4);
  ModelParams<double> m = random_model(ModelDims::tiny(3), Variant::full, rng);
  Batch<double> b = random_batch(4, 1, 3, 3, rng);
  b.lengths = {3, 5, 2, 4};  // variable lengths, as real batches have
  b.patches = FeatureMaps<double>(3, 32, 32, 14);
  fill_uniform(b.patches.data, -0.5, 0.5, rng);
  const auto all = forward(m, b, ForwardOptions{});
  for (int i = 0; i < 4; ++i) {
    const Batch<double> one = slice(b, i);
    const auto single = forward(m, one, ForwardOptions{});
    EXPECT_LT((single[0].z - all[static_cast<size_t>(i)].z).cwiseAbs().maxCoeff(), 1e-12);
    const double l1 = evaluate_loss(m, one, ForwardOptions{}, 0.0);
    EXPECT_NEAR(l1, sample_nll(all[static_cast<size_t>(i)].z, b.labels[static_cast<size_t>(i)]), 1e-5);
  }
}

TEST(Model, BuffersGetNoGradient) {
  Rng rng(5);
  ModelParams<double> m = random_model(ModelDims::tiny(3), Variant::full, rng);
  const Batch<double> b = random_batch(2, 3, 3, 3, rng);
  ForwardTrace<double> trace;
  forward(m, b, ForwardOptions{Mode::train, true, 5}, &trace);
  ModelParams<double> g = backward(m, trace, b.labels, 5e-4);
  for (const auto& t : g.tensors()) {
    const double norm = Eigen::Map<const Vector<double>>(t.data, t.size).norm();
    if (t.kind == ParamKind::buffer) {
      EXPECT_EQ(norm, 0.0) << t.name;
    }
  }
}

TEST(GradCheck, EveryVariantPasses) {
  for (Variant v : {Variant::full, Variant::variant1, Variant::variant2}) {
    GradCheckConfig cfg;
    cfg.variant = v;
    const auto r = gradient_check(cfg);
    EXPECT_TRUE(r.pass) << to_string(v) << " max rel error " << r.max_rel_error;
    EXPECT_GE(r.entries.size(), 200u);
  }
}

TEST(GradCheck, CoversEveryTrainableTensor) {
  GradCheckConfig cfg;
  const auto r = gradient_check(cfg);
  ModelParams<double> m = ModelParams<double>::zeros(ModelDims::tiny(3), Variant::full);
  int trainable = 0;
  for (const auto& t : m.tensors()) trainable += is_trainable(t.kind);
  EXPECT_EQ(r.tensors_covered(), trainable);
}

TEST(GradCheck, SignFlipIsCaught) {
  GradCheckConfig cfg;
  const auto r = gradient_check(cfg, [](ModelParams<double>& g) { g.lstm[1].w_hf *= -1.0; });
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.worst(1).front().tensor, "lstm.layer2.w_hf");
}

TEST(GradCheck, RepeatedRunsGiveIdenticalReports) {
  GradCheckConfig cfg;
  cfg.seed = 11;
  const auto a = gradient_check(cfg);
  const auto b = gradient_check(cfg);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].tensor, b.entries[i].tensor);
    EXPECT_EQ(a.entries[i].index, b.entries[i].index);
    EXPECT_EQ(a.entries[i].analytic, b.entries[i].analytic);
    EXPECT_EQ(a.entries[i].numeric, b.entries[i].numeric);
  }
  EXPECT_EQ(a.max_rel_error, b.max_rel_error);
}

TEST(Variant, NamesRoundTrip) {
  for (Variant v : {Variant::full, Variant::variant1, Variant::variant2}) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("variant3"), InvalidInput);
}
