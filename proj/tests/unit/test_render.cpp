#include <gtest/gtest.h>

#include "scriptid/patcher.hpp"
#include "scriptid/render.hpp"

using namespace scriptid;

namespace {

PatchSequence patches_for(int width) {
  NormalizedImage img;
  img.height = kTargetHeight;
  img.width = width;
  img.channels = 1;
  img.data.assign(static_cast<size_t>(width) * kTargetHeight, 0.5f);
  return extract_patches(img, "x");
}

}  // namespace

TEST(AttentionMap, SizeMatchesImage) {
  const PatchSequence seq = patches_for(96);
  const RawImage map = render_attention_map(40, 96, seq, std::vector<double>(static_cast<size_t>(seq.count()), 1.0 / seq.count()));
  EXPECT_EQ(map.height, 40);
  EXPECT_EQ(map.width, 96);
  EXPECT_EQ(map.channels, 1);
}

TEST(AttentionMap, UniformWeightsGiveUniformMap) {
  const PatchSequence seq = patches_for(96);
  const RawImage map = render_attention_map(40, 96, seq, std::vector<double>(static_cast<size_t>(seq.count()), 1.0 / seq.count()));
  for (auto v : map.data) EXPECT_EQ(v, 255);
}

TEST(AttentionMap, DominantPatchIsTheBrightRegion) {
  const PatchSequence seq = patches_for(96);
  std::vector<double> p(static_cast<size_t>(seq.count()), 0.0);
  const int hot = 5;
  p[hot] = 1.0;
  const RawImage map = render_attention_map(40, 96, seq, p);
  const int ox = seq.patches[hot].origin_x, oy = seq.patches[hot].origin_y;
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 96; ++x) {
      const bool inside = x >= ox && x < ox + kPatchSize && y >= oy && y < oy + kPatchSize;
      EXPECT_EQ(map.at(y, x, 0), inside ? 255 : 0) << y << "," << x;
    }
}

TEST(AttentionMap, RejectsMismatchedWeights) {
  const PatchSequence seq = patches_for(64);
  EXPECT_ANY_THROW(render_attention_map(40, 64, seq, {0.5, 0.5}));
}
