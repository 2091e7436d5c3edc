#include "scriptid/render.hpp"

#include <algorithm>
#include <cmath>

#include "scriptid/error.hpp"

namespace scriptid {

RawImage render_attention_map(int height, int width, const PatchSequence& patches, const std::vector<double>& p) {
  if (height < 1 || width < 1) throw InvalidInput("attention map needs a positive size");
  if (p.size() != patches.patches.size() || p.empty()) throw InvalidShape("one attention weight per patch required");
  const double top = *std::max_element(p.begin(), p.end());
  if (!(top > 0)) throw InvalidInput("attention weights are all zero");

  std::vector<double> level(static_cast<size_t>(height) * width, 0.0);
  for (size_t d = 0; d < p.size(); ++d) {
    const auto& patch = patches.patches[d];
    const double v = std::max(0.0, p[d] / top);
    for (int y = std::max(0, patch.origin_y); y < std::min(height, patch.origin_y + kPatchSize); ++y) {
      for (int x = std::max(0, patch.origin_x); x < std::min(width, patch.origin_x + kPatchSize); ++x) {
        double& cell = level[static_cast<size_t>(y) * width + x];
        cell = std::max(cell, v);
      }
    }
  }
  RawImage out(height, width, 1);
  for (size_t i = 0; i < level.size(); ++i) out.data[i] = static_cast<std::uint8_t>(std::lround(255.0 * level[i]));
  return out;
}

}  // namespace scriptid
