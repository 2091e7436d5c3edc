#include "scriptid/dims.hpp"

#include "scriptid/error.hpp"
#include "scriptid/kernels.hpp"
#include "scriptid/patcher.hpp"

namespace scriptid {

ModelDims ModelDims::standard(int n_classes, int channels) {
  ModelDims d;
  d.channels = channels;
  d.n_classes = n_classes;
  return d;
}

ModelDims ModelDims::desk(int n_classes, int channels) {
  ModelDims d;
  d.channels = channels;
  d.conv_filters = {8, 16, 24, 32};
  d.fc_hidden = 64;
  d.feature = 32;
  d.lstm_hidden = 32;
  d.attention = 16;
  d.fusion = 16;
  d.n_classes = n_classes;
  return d;
}

ModelDims ModelDims::tiny(int n_classes, int channels) {
  ModelDims d;
  d.channels = channels;
  d.conv_filters = {8, 8, 8, 8};
  d.fc_hidden = 8;
  d.feature = 8;
  d.lstm_hidden = 8;
  d.attention = 8;
  d.fusion = 8;
  d.n_classes = n_classes;
  return d;
}

ModelDims ModelDims::preset(const std::string& name, int n_classes, int channels) {
  if (name == "standard") return standard(n_classes, channels);
  if (name == "desk") return desk(n_classes, channels);
  if (name == "tiny") return tiny(n_classes, channels);
  throw InvalidInput("unknown architecture preset '" + name + "' (expected standard, desk or tiny)");
}

std::vector<LayerShape> encoder_shape_chain(const ModelDims& dims) {
  static constexpr int kernels[4] = {5, 3, 3, 1};
  const PoolGeometry pool;
  std::vector<LayerShape> chain;
  chain.push_back({"input", {dims.channels, kPatchSize, kPatchSize}});
  int size = kPatchSize;
  for (int l = 0; l < 4; ++l) {
    size = conv_output_size(size, ConvGeometry{kernels[l], 1, 0});
    chain.push_back({"conv" + std::to_string(l + 1), {dims.conv_filters[l], size, size}});
    if (l < 3) {
      size = pool_output_size(size, pool);
      chain.push_back({"pool" + std::to_string(l + 1), {dims.conv_filters[l], size, size}});
    }
  }
  chain.push_back({"fc1", {dims.fc_hidden}});
  chain.push_back({"fc2", {dims.feature}});
  return chain;
}

}  // namespace scriptid
