#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "scriptid/image.hpp"

namespace scriptid {

using Rng = std::mt19937_64;

inline constexpr int kTargetHeight = 40;
inline constexpr int kPatchSize = 32;
inline constexpr int kPatchStride = 8;
inline constexpr int kDefaultMaxPatches = 100;

/// Height-normalized image, planar (channel, row, column), samples in [0, 1].
struct NormalizedImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  float& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
};

struct Patch {
  std::vector<float> pixels;  // channels x 32 x 32, planar
  int origin_x = 0;
  int origin_y = 0;
};

struct PatchSequence {
  std::vector<Patch> patches;
  std::string sample_id;
  int channels = 0;

  int count() const { return static_cast<int>(patches.size()); }
};

/// Bilinear resize to `target_height`, keeping the aspect ratio; images that end up
/// narrower than one patch are right-padded by replicating the last column.
NormalizedImage resize_to_height(const RawImage& img, int target_height = kTargetHeight);

/// Number of patches `extract_patches` emits for a normalized image of this size.
int patch_count(int height, int width);

/// Slides a 32x32 window with stride 8, column by column, top before bottom.
PatchSequence extract_patches(const NormalizedImage& img, const std::string& sample_id = {});

/// Keeps at most `n_max` patches, chosen uniformly without replacement, in original order.
PatchSequence cap_patches(PatchSequence seq, int n_max, Rng& rng);

/// Brightness gain and sub-pixel horizontal shift for the optional augmentation path.
NormalizedImage jitter_image(const NormalizedImage& img, Rng& rng, double brightness = 0.1, double max_shift = 2.0);

}  // namespace scriptid
