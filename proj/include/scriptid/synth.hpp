#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scriptid/dataset.hpp"
#include "scriptid/image.hpp"
#include "scriptid/patcher.hpp"

namespace scriptid {

/// Stroke statistics of one synthetic "script". Lengths are fractions of the line height.
struct StrokeStyle {
  double stroke_width = 0.06;
  double curvature = 0.2;       // control-point offset of each stroke
  double glyph_width = 0.5;
  int strokes_per_glyph = 2;
  double vertical_bias = 0.5;   // probability that a stroke is a stem
  double loop_rate = 0.2;       // probability of a closed loop per glyph
  double word_gap_rate = 0.15;  // probability of a gap after a glyph
  bool headline = false;        // bar along the top of each word
  bool baseline_link = false;   // strokes joined along the baseline
  double waviness = 0.0;        // baseline wave amplitude
};

struct SynthSpec {
  int n_classes = 3;
  int samples_per_class = 10;
  int min_width = 60;
  int max_width = 300;
  int min_height = 30;
  int max_height = 60;
  double noise = 0.06;  // Gaussian noise sigma, in units of full scale
  std::uint64_t seed = 1;
  int channels = 3;
  std::vector<StrokeStyle> styles;  // empty: default_styles(n_classes)
};

/// Pairwise-distinct styles; the first three are hand-tuned, further ones are
/// spread deterministically over the parameter ranges.
std::vector<StrokeStyle> default_styles(int n_classes);

std::string synthetic_class_name(int index);

/// Renders one text line with the given style on a noisy background.
RawImage render_text_line(const StrokeStyle& style, int height, int width, int channels, double noise, Rng& rng);

/// Writes `<out_dir>/<class>/<class>_<i>.png` for every sample and `<out_dir>/manifest.tsv`.
/// Output depends only on the spec; every image draws from its own seed (seed xor index).
DatasetManifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace scriptid
