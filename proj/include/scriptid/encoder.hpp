#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "scriptid/dims.hpp"
#include "scriptid/kernels.hpp"
#include "scriptid/params.hpp"
#include "scriptid/patcher.hpp"

namespace scriptid {

template <class T>
struct ConvLayerParams {
  Matrix<T> kernels;  // out x (in * k * k)
  Vector<T> bias;
  ConvGeometry geometry;
};

template <class T>
struct FcLayerParams {
  Matrix<T> weights;  // out x in
  Vector<T> bias;
};

/// conv1..conv4 with batch norm, then fc1 (ReLU + dropout) and fc2 (linear feature output).
template <class T>
struct EncoderParams {
  std::array<ConvLayerParams<T>, 4> conv;
  std::array<BatchNormParams<T>, 4> bn;
  FcLayerParams<T> fc1;
  FcLayerParams<T> fc2;
  double dropout_rate = 0.5;

  /// All-zero weights with batch norm at identity (gamma 1, beta 0, unit running variance).
  static EncoderParams zeros(const ModelDims& dims);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    visit_impl(*this, prefix, f);
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) const {
    visit_impl(*this, prefix, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, const std::string& prefix, F& f) {
    for (int l = 0; l < 4; ++l) {
      const std::string conv = prefix + "conv" + std::to_string(l + 1) + ".";
      const std::string bn = prefix + "bn" + std::to_string(l + 1) + ".";
      const int k = self.conv[l].geometry.kernel;
      const int out = static_cast<int>(self.conv[l].kernels.rows());
      const int in = static_cast<int>(self.conv[l].kernels.cols()) / (k * k);
      f(conv + "kernels", ParamKind::weight, std::vector<int>{out, in, k, k}, self.conv[l].kernels);
      f(conv + "bias", ParamKind::bias, std::vector<int>{out}, self.conv[l].bias);
      f(bn + "gamma", ParamKind::bias, std::vector<int>{out}, self.bn[l].gamma);
      f(bn + "beta", ParamKind::bias, std::vector<int>{out}, self.bn[l].beta);
      f(bn + "running_mean", ParamKind::buffer, std::vector<int>{out}, self.bn[l].running_mean);
      f(bn + "running_var", ParamKind::buffer, std::vector<int>{out}, self.bn[l].running_var);
    }
    for (auto [name, layer] : {std::pair{"fc1.", &self.fc1}, std::pair{"fc2.", &self.fc2}}) {
      const int out = static_cast<int>(layer->weights.rows());
      const int in = static_cast<int>(layer->weights.cols());
      f(prefix + name + "weights", ParamKind::weight, std::vector<int>{out, in}, layer->weights);
      f(prefix + name + "bias", ParamKind::bias, std::vector<int>{out}, layer->bias);
    }
  }
};

/// Forward-pass options. Dropout masks are drawn from `dropout_seed`, so a repeated
/// forward with the same seed reproduces the same mask.
struct EncodeOptions {
  Mode mode = Mode::eval;
  bool dropout = false;
  std::uint64_t dropout_seed = 0;
};

/// Activations retained for the backward pass.
template <class T>
struct EncoderTrace {
  Mode mode = Mode::eval;
  std::array<FeatureMaps<T>, 4> conv_input;
  std::array<BatchNormCache<T>, 4> bn;
  std::array<FeatureMaps<T>, 4> relu_output;
  std::array<PoolIndices, 3> pool;
  Matrix<T> flat;         // N x (C * 3 * 3), channel-major per patch
  Matrix<T> fc1_output;   // after ReLU, before dropout
  Matrix<T> dropout_mask; // empty when dropout is off; otherwise 0 or 1/(1-rate)
  Matrix<T> fc2_input;
  std::vector<LayerShape> shapes;  // per-patch shape after every stage
  bool valid = false;
};

/// Packs patches into a batch feature map, subtracting `pixel_mean` per channel when given.
template <class T>
FeatureMaps<T> pack_patches(const std::vector<const Patch*>& patches, int channels,
                            const std::vector<float>& pixel_mean = {});

/// Encodes every patch of the batch; returns N x feature rows. Parameters are shared by
/// all patches; train-mode batch norm uses statistics over the whole patch batch.
template <class T>
Matrix<T> encode_batch(const FeatureMaps<T>& patches, EncoderParams<T>& params, const EncodeOptions& options,
                       EncoderTrace<T>* trace);

/// Accumulates parameter gradients into `grads` and returns the gradient w.r.t. the input patches.
template <class T>
FeatureMaps<T> encode_batch_backward(const EncoderTrace<T>& trace, const EncoderParams<T>& params,
                                     const Matrix<T>& grad_features, EncoderParams<T>& grads);

/// Single-patch wrapper. Train mode throws ConfigurationError: batch norm needs at least two patches.
template <class T>
Vector<T> encode_patch(const Patch& patch, EncoderParams<T>& params, Mode mode);

}  // namespace scriptid
