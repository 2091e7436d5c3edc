#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "oracles.hpp"
#include "scriptid/dataset.hpp"
#include "scriptid/error.hpp"
#include "scriptid/image.hpp"
#include "scriptid/synth.hpp"
#include "test_util.hpp"

using namespace scriptid;
using scriptid::testing::TempDir;

namespace {

void touch_image(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  save_image(RawImage(40, 64, 1, 200), p);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DatasetManifest synthetic_manifest(int classes, int per_class) {
  DatasetManifest m;
  for (int k = 0; k < classes; ++k) {
    m.class_table.push_back("c" + std::to_string(k));
    for (int i = 0; i < per_class; ++i) m.records.push_back({"c" + std::to_string(k) + "/" + std::to_string(i) + ".png", m.class_table.back()});
  }
  return m;
}

}  // namespace

TEST(Manifest, FirstAppearanceOrder) {
  TempDir dir("manifest");
  for (const char* f : {"a.png", "b.png", "c.png", "d.png"}) touch_image(dir / f);
  std::ofstream(dir / "m.tsv") << "# comment\nb.png\tgreek\n\na.png\tlatin\nc.png\tgreek\nd.png\tarabic\n";
  const DatasetManifest m = load_manifest(dir / "m.tsv");
  EXPECT_EQ(m.class_table, (std::vector<std::string>{"greek", "latin", "arabic"}));
  ASSERT_EQ(m.records.size(), 4u);
  EXPECT_EQ(m.label_index("latin"), 1);
  EXPECT_EQ(m.class_counts(), (std::vector<int>{2, 1, 1}));
  EXPECT_EQ(m.resolve(m.records[0]), dir / "b.png");
  EXPECT_THROW(m.label_index("thai"), InvalidInput);
}

TEST(Manifest, ClassesHeaderFixesOrder) {
  TempDir dir("manifest");
  touch_image(dir / "a.png");
  std::ofstream(dir / "m.tsv") << "#classes\tthai\tlatin\na.png\tlatin\n";
  EXPECT_EQ(load_manifest(dir / "m.tsv").class_table, (std::vector<std::string>{"thai", "latin"}));
  std::ofstream(dir / "bad.tsv") << "#classes\tthai\na.png\tlatin\n";
  EXPECT_THROW(load_manifest(dir / "bad.tsv"), InvalidInput);
}

TEST(Manifest, SaveLoadRoundTrip) {
  TempDir dir("manifest");
  touch_image(dir / "x" / "1.png");
  touch_image(dir / "y" / "2.png");
  DatasetManifest m;
  m.class_table = {"y", "x"};
  m.records = {{"x/1.png", "x"}, {"y/2.png", "y"}};
  save_manifest(m, dir / "m.tsv");
  const DatasetManifest back = load_manifest(dir / "m.tsv");
  EXPECT_EQ(back.class_table, m.class_table);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[1].path, "y/2.png");
  EXPECT_EQ(back.records[1].label, "y");
}

TEST(Manifest, MissingImageNamed) {
  TempDir dir("manifest");
  std::ofstream(dir / "m.tsv") << "ghost.png\tlatin\n";
  try {
    load_manifest(dir / "m.tsv");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost.png"), std::string::npos);
  }
  EXPECT_NO_THROW(load_manifest(dir / "m.tsv", false));
  EXPECT_THROW(load_manifest(dir / "absent.tsv"), IoError);
}

TEST(Manifest, MalformedAndDuplicateRejected) {
  TempDir dir("manifest");
  touch_image(dir / "a.png");
  std::ofstream(dir / "dup.tsv") << "a.png\tx\na.png\ty\n";
  EXPECT_THROW(load_manifest(dir / "dup.tsv"), InvalidInput);
  std::ofstream(dir / "bad.tsv") << "a.png latin\n";
  EXPECT_THROW(load_manifest(dir / "bad.tsv"), InvalidInput);
}

TEST(FolderManifest, OneClassPerDirectory) {
  TempDir dir("folders");
  std::vector<std::string> names;
  for (int k = 0; k < 13; ++k) {
    names.push_back("script" + std::string(k < 10 ? "0" : "") + std::to_string(k));
    touch_image(dir / names.back() / "a.png");
    touch_image(dir / names.back() / "b.pgm");
  }
  std::ofstream(dir / names[0] / "notes.txt") << "not an image";
  const DatasetManifest m = folder_manifest(dir.path());
  EXPECT_EQ(m.class_table, names);
  EXPECT_EQ(m.records.size(), 26u);
  for (int c : m.class_counts()) EXPECT_EQ(c, 2);
  EXPECT_THROW(folder_manifest(dir / "missing"), IoError);
}

TEST(Split, SizesDisjointExhaustive) {
  const DatasetManifest m = synthetic_manifest(2, 100);
  const auto parts = split(m, SplitRatios{}, 3);
  EXPECT_EQ(parts[0].class_counts(), (std::vector<int>{60, 60}));
  EXPECT_EQ(parts[1].class_counts(), (std::vector<int>{10, 10}));
  EXPECT_EQ(parts[2].class_counts(), (std::vector<int>{30, 30}));
  std::set<std::string> seen;
  for (const auto& p : parts) {
    EXPECT_EQ(p.class_table, m.class_table);
    for (const auto& r : p.records) EXPECT_TRUE(seen.insert(r.path).second) << r.path;
  }
  EXPECT_EQ(seen.size(), 200u);
}

TEST(Split, SeededAndSeedSensitive) {
  const DatasetManifest m = synthetic_manifest(3, 20);
  const auto a = split(m, SplitRatios{}, 9);
  const auto b = split(m, SplitRatios{}, 9);
  const auto c = split(m, SplitRatios{}, 10);
  auto paths = [](const DatasetManifest& d) {
    std::vector<std::string> out;
    for (const auto& r : d.records) out.push_back(r.path);
    return out;
  };
  EXPECT_EQ(paths(a[2]), paths(b[2]));
  EXPECT_NE(paths(a[2]), paths(c[2]));
}

TEST(Split, RejectsTinyClassesAndBadRatios) {
  EXPECT_THROW(split(synthetic_manifest(2, 2), SplitRatios{}, 1), InvalidInput);
  EXPECT_THROW(split(synthetic_manifest(2, 50), SplitRatios{0.5, 0.5, 0.5}, 1), InvalidInput);
}

TEST(Synth, ByteIdenticalAcrossRuns) {
  TempDir a("synth"), b("synth");
  SynthSpec spec;
  spec.samples_per_class = 10;
  const DatasetManifest ma = generate_synthetic(spec, a.path());
  generate_synthetic(spec, b.path());
  ASSERT_EQ(ma.records.size(), 30u);
  EXPECT_EQ(ma.class_table.size(), 3u);
  for (const auto& r : ma.records) EXPECT_EQ(slurp(a / r.path), slurp(b / r.path)) << r.path;
  EXPECT_EQ(slurp(a / "manifest.tsv"), slurp(b / "manifest.tsv"));
  const DatasetManifest loaded = load_manifest(a / "manifest.tsv");
  EXPECT_EQ(loaded.class_table, ma.class_table);
  const RawImage img = load_image(ma.resolve(ma.records[0]), 3);
  EXPECT_GE(img.height, spec.min_height);
  EXPECT_LE(img.height, spec.max_height);
  EXPECT_GE(img.width, spec.min_width);
  EXPECT_LE(img.width, spec.max_width);
}

TEST(Synth, StylesPairwiseDistinct) {
  const auto styles = default_styles(8);
  ASSERT_EQ(styles.size(), 8u);
  for (size_t i = 0; i < styles.size(); ++i)
    for (size_t j = i + 1; j < styles.size(); ++j)
      EXPECT_FALSE(styles[i].stroke_width == styles[j].stroke_width && styles[i].curvature == styles[j].curvature &&
                   styles[i].glyph_width == styles[j].glyph_width)
          << i << " " << j;
  EXPECT_NE(synthetic_class_name(0), synthetic_class_name(1));
}

TEST(Synth, SeparableByInkStatisticsNotByOnePixel) {
  TempDir dir("separability");
  SynthSpec spec;
  spec.samples_per_class = 100;
  spec.seed = 1;
  const DatasetManifest m = generate_synthetic(spec, dir.path());
  const auto samples = load_samples(m, m.class_table, 3);
  const double hist = scriptid::testing::histogram_linear_accuracy(samples, 3);
  const double pixel = scriptid::testing::single_pixel_accuracy(samples, 3);
  EXPECT_GE(hist, 0.8);
  EXPECT_LE(pixel, 0.5);
}

TEST(Samples, PixelMeanAndLabels) {
  TempDir dir("samples");
  touch_image(dir / "a.png");
  DatasetManifest m;
  m.root = dir.path();
  m.class_table = {"only", "other"};
  m.records = {{"a.png", "only"}};
  const auto s = load_samples(m, m.class_table, 3);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].label, 0);
  EXPECT_EQ(s[0].image.height, kTargetHeight);
  const auto mean = compute_pixel_mean(s, 3);
  ASSERT_EQ(mean.size(), 3u);
  EXPECT_NEAR(mean[0], 200.0 / 255.0, 1e-6);
  m.records[0].label = "unknown";
  EXPECT_THROW(load_samples(m, m.class_table, 3), InvalidInput);
}
