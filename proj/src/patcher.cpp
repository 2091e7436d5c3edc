#include "scriptid/patcher.hpp"

#include <algorithm>
#include <cmath>

#include "scriptid/error.hpp"

namespace scriptid {

namespace {

// Bilinear sample with half-pixel centres; clamps at the borders.
float sample_bilinear(const RawImage& img, int c, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double wy = sy - y0;
  const double wx = sx - x0;
  const double top = (1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
  const double bottom = (1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
  return static_cast<float>(((1 - wy) * top + wy * bottom) / 255.0);
}

}  // namespace

NormalizedImage resize_to_height(const RawImage& img, int target_height) {
  if (!img.valid()) throw InvalidInput("zero-dimension image");
  if (target_height < 1) throw InvalidInput("target height must be positive");

  const int scaled_width =
      std::max(1, static_cast<int>(std::lround(static_cast<double>(img.width) * target_height / img.height)));
  const double sy = static_cast<double>(img.height) / target_height;
  const double sx = static_cast<double>(img.width) / scaled_width;

  NormalizedImage out;
  out.height = target_height;
  out.width = std::max(scaled_width, kPatchSize);
  out.channels = img.channels;
  out.data.assign(static_cast<size_t>(out.channels) * out.height * out.width, 0.0f);
  for (int c = 0; c < out.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      const double src_y = (y + 0.5) * sy - 0.5;
      for (int x = 0; x < scaled_width; ++x) {
        out.at(c, y, x) = sample_bilinear(img, c, src_y, (x + 0.5) * sx - 0.5);
      }
      for (int x = scaled_width; x < out.width; ++x) out.at(c, y, x) = out.at(c, y, scaled_width - 1);
    }
  }
  return out;
}

int patch_count(int height, int width) {
  if (height < kPatchSize || width < kPatchSize) return 0;
  const int rows = (height - kPatchSize) / kPatchStride + 1;
  const int cols = (width - kPatchSize) / kPatchStride + 1;
  return rows * cols;
}

PatchSequence extract_patches(const NormalizedImage& img, const std::string& sample_id) {
  if (img.height < kPatchSize || img.width < kPatchSize) {
    throw InvalidInput("normalized image smaller than one patch");
  }
  PatchSequence seq;
  seq.sample_id = sample_id;
  seq.channels = img.channels;
  seq.patches.reserve(static_cast<size_t>(patch_count(img.height, img.width)));
  for (int x0 = 0; x0 + kPatchSize <= img.width; x0 += kPatchStride) {
    for (int y0 = 0; y0 + kPatchSize <= img.height; y0 += kPatchStride) {
      Patch p;
      p.origin_x = x0;
      p.origin_y = y0;
      p.pixels.resize(static_cast<size_t>(img.channels) * kPatchSize * kPatchSize);
      auto* dst = p.pixels.data();
      for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < kPatchSize; ++y) {
          const float* row = &img.data[(static_cast<size_t>(c) * img.height + y0 + y) * img.width + x0];
          dst = std::copy(row, row + kPatchSize, dst);
        }
      }
      seq.patches.push_back(std::move(p));
    }
  }
  return seq;
}

PatchSequence cap_patches(PatchSequence seq, int n_max, Rng& rng) {
  if (n_max < 1) throw InvalidInput("patch cap must be at least 1");
  if (seq.count() <= n_max) return seq;
  std::vector<int> all(static_cast<size_t>(seq.count()));
  for (int i = 0; i < seq.count(); ++i) all[static_cast<size_t>(i)] = i;
  std::vector<int> keep;
  keep.reserve(static_cast<size_t>(n_max));
  std::sample(all.begin(), all.end(), std::back_inserter(keep), n_max, rng);
  std::sort(keep.begin(), keep.end());
  std::vector<Patch> kept;
  kept.reserve(keep.size());
  for (int i : keep) kept.push_back(std::move(seq.patches[static_cast<size_t>(i)]));
  seq.patches = std::move(kept);
  return seq;
}

NormalizedImage jitter_image(const NormalizedImage& img, Rng& rng, double brightness, double max_shift) {
  std::uniform_real_distribution<double> gain_dist(1.0 - brightness, 1.0 + brightness);
  std::uniform_real_distribution<double> shift_dist(-max_shift, max_shift);
  const double gain = gain_dist(rng);
  const double shift = shift_dist(rng);
  NormalizedImage out = img;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double sx = std::clamp(x - shift, 0.0, static_cast<double>(img.width - 1));
        const int x0 = static_cast<int>(std::floor(sx));
        const int x1 = std::min(x0 + 1, img.width - 1);
        const double w = sx - x0;
        const double v = (1 - w) * img.at(c, y, x0) + w * img.at(c, y, x1);
        out.at(c, y, x) = static_cast<float>(std::clamp(v * gain, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace scriptid
