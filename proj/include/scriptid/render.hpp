#pragma once

#include <vector>

#include "scriptid/image.hpp"
#include "scriptid/patcher.hpp"

namespace scriptid {

/// Grayscale map at the normalized image's size. Each pixel takes the largest
/// p_d / max(p) over the patches covering it, scaled to 0..255 (white = most attended).
/// Pixels no patch covers are black.
RawImage render_attention_map(int height, int width, const PatchSequence& patches, const std::vector<double>& p);

}  // namespace scriptid
