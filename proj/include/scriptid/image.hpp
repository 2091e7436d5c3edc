#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace scriptid {

/// 8-bit interleaved image as read from disk.
struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;  // row-major, channels interleaved

  RawImage() = default;
  RawImage(int h, int w, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }

  bool valid() const;
};

/// Reads PNG, PPM (P3/P6) or PGM (P2/P5) and converts to `channels` (1 or 3).
RawImage load_image(const std::filesystem::path& path, int channels);

/// Writes by extension: `.png`, `.pgm`, `.ppm`.
void save_image(const RawImage& img, const std::filesystem::path& path);

/// Converts between gray and RGB; gray uses the Rec.601 luma weights.
RawImage convert_channels(const RawImage& img, int channels);

}  // namespace scriptid
