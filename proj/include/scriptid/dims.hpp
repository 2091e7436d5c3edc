#pragma once

#include <array>
#include <string>
#include <vector>

namespace scriptid {

/// Layer widths of the whole network. Kernel sizes, strides and the 32x32 patch
/// geometry are fixed; only widths vary between presets.
struct ModelDims {
  int channels = 3;
  std::array<int, 4> conv_filters{96, 256, 384, 512};
  int fc_hidden = 4096;
  int feature = 256;
  int lstm_hidden = 512;
  int attention = 256;
  int fusion = 256;
  int n_classes = 2;

  /// Full-width network (96/256/384/512 filters, 4096-wide fc, 512-unit LSTMs).
  static ModelDims standard(int n_classes, int channels = 3);
  /// Same structure with narrow layers, sized for single-core training runs.
  static ModelDims desk(int n_classes, int channels = 3);
  /// 8-wide everything; used for finite-difference checks.
  static ModelDims tiny(int n_classes, int channels = 3);
  static ModelDims preset(const std::string& name, int n_classes, int channels = 3);

  bool operator==(const ModelDims&) const = default;
};

/// Per-sample output shape of one encoder stage: {C, H, W} or {width}.
struct LayerShape {
  std::string name;
  std::vector<int> dims;

  bool operator==(const LayerShape&) const = default;
};

/// Expected encoder shape chain for 32x32 input patches.
std::vector<LayerShape> encoder_shape_chain(const ModelDims& dims);

}  // namespace scriptid
