#include "scriptid/encoder.hpp"

#include <random>

namespace scriptid {

namespace {

constexpr int kKernelSizes[4] = {5, 3, 3, 1};
const PoolGeometry kPool{3, 2, 1};

template <class T>
std::vector<int> shape_of(const FeatureMaps<T>& f) {
  return {f.channels, f.height, f.width};
}

template <class T>
void relu_inplace(Matrix<T>& m) {
  m = m.cwiseMax(T(0));
}

}  // namespace

template <class T>
EncoderParams<T> EncoderParams<T>::zeros(const ModelDims& dims) {
  EncoderParams<T> p;
  int in = dims.channels;
  for (int l = 0; l < 4; ++l) {
    const int k = kKernelSizes[l];
    const int out = dims.conv_filters[l];
    p.conv[l].kernels = Matrix<T>::Zero(out, Index(in) * k * k);
    p.conv[l].bias = Vector<T>::Zero(out);
    p.conv[l].geometry = ConvGeometry{k, 1, 0};
    p.bn[l] = BatchNormParams<T>(out);
    in = out;
  }
  const auto chain = encoder_shape_chain(dims);
  const auto& last = chain[chain.size() - 3].dims;  // conv4 output
  const int flat = last[0] * last[1] * last[2];
  p.fc1.weights = Matrix<T>::Zero(dims.fc_hidden, flat);
  p.fc1.bias = Vector<T>::Zero(dims.fc_hidden);
  p.fc2.weights = Matrix<T>::Zero(dims.feature, dims.fc_hidden);
  p.fc2.bias = Vector<T>::Zero(dims.feature);
  return p;
}

template <class T>
FeatureMaps<T> pack_patches(const std::vector<const Patch*>& patches, int channels,
                            const std::vector<float>& pixel_mean) {
  FeatureMaps<T> maps(channels, kPatchSize, kPatchSize, static_cast<int>(patches.size()));
  const Index plane = maps.plane();
  for (size_t n = 0; n < patches.size(); ++n) {
    const auto& px = patches[n]->pixels;
    if (px.size() != static_cast<size_t>(channels * plane)) throw InvalidShape("patch does not match channel count");
    for (int c = 0; c < channels; ++c) {
      const T mean = pixel_mean.empty() ? T(0) : T(pixel_mean[static_cast<size_t>(c)]);
      T* dst = maps.data.row(c).data() + Index(n) * plane;
      const float* src = px.data() + c * plane;
      for (Index j = 0; j < plane; ++j) dst[j] = T(src[j]) - mean;
    }
  }
  return maps;
}

template <class T>
Matrix<T> encode_batch(const FeatureMaps<T>& patches, EncoderParams<T>& params, const EncodeOptions& options,
                       EncoderTrace<T>* trace) {
  if (patches.height != kPatchSize || patches.width != kPatchSize) throw InvalidShape("patches must be 32x32");
  if (patches.channels * kKernelSizes[0] * kKernelSizes[0] != params.conv[0].kernels.cols()) {
    throw InvalidShape("patch channels do not match conv1");
  }
  if (patches.count < 1) throw InvalidInput("empty patch batch");

  EncoderTrace<T> local;
  EncoderTrace<T>& tr = trace ? *trace : local;
  tr = EncoderTrace<T>{};
  tr.mode = options.mode;
  tr.shapes.push_back({"input", shape_of(patches)});

  FeatureMaps<T> x = patches;
  for (int l = 0; l < 4; ++l) {
    const std::string name = "conv" + std::to_string(l + 1);
    FeatureMaps<T> a = kernels::conv2d_forward(x, params.conv[l].kernels, params.conv[l].bias, params.conv[l].geometry);
    require_finite(a.data, "encoder." + name);
    tr.shapes.push_back({name, shape_of(a)});
    if (trace) tr.conv_input[l] = std::move(x);
    FeatureMaps<T> b = kernels::batchnorm_forward(a, params.bn[l], options.mode, trace ? &tr.bn[l] : nullptr);
    require_finite(b.data, "encoder.bn" + std::to_string(l + 1));
    relu_inplace(b.data);
    if (l < 3) {
      x = kernels::maxpool_forward(b, kPool, trace ? &tr.pool[l] : nullptr);
      tr.shapes.push_back({"pool" + std::to_string(l + 1), shape_of(x)});
    } else {
      x = b;
    }
    if (trace) tr.relu_output[l] = std::move(b);
  }

  // Flatten channel-major per patch: column = c * H * W + y * W + x.
  const Index plane = x.plane();
  Matrix<T> flat(x.count, Index(x.channels) * plane);
  for (int n = 0; n < x.count; ++n) {
    for (int c = 0; c < x.channels; ++c) {
      flat.row(n).segment(c * plane, plane) = x.data.row(c).segment(n * plane, plane);
    }
  }
  if (flat.cols() != params.fc1.weights.cols()) throw InvalidShape("conv4 output does not match fc1");

  Matrix<T> h = flat * params.fc1.weights.transpose();
  h.rowwise() += params.fc1.bias.transpose();
  relu_inplace(h);
  require_finite(h, "encoder.fc1");
  tr.shapes.push_back({"fc1", {static_cast<int>(h.cols())}});

  Matrix<T> fc2_in = h;
  Matrix<T> mask;
  if (options.mode == Mode::train && options.dropout && params.dropout_rate > 0) {
    Rng rng(options.dropout_seed);
    std::bernoulli_distribution keep(1.0 - params.dropout_rate);
    const T scale = T(1.0 / (1.0 - params.dropout_rate));
    mask.resize(h.rows(), h.cols());
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : T(0);
    fc2_in = h.cwiseProduct(mask);
  }

  Matrix<T> y = fc2_in * params.fc2.weights.transpose();
  y.rowwise() += params.fc2.bias.transpose();
  require_finite(y, "encoder.fc2");
  tr.shapes.push_back({"fc2", {static_cast<int>(y.cols())}});

  if (trace) {
    tr.flat = std::move(flat);
    tr.fc1_output = std::move(h);
    tr.dropout_mask = std::move(mask);
    tr.fc2_input = std::move(fc2_in);
    tr.valid = true;
  }
  return y;
}

template <class T>
FeatureMaps<T> encode_batch_backward(const EncoderTrace<T>& trace, const EncoderParams<T>& params,
                                     const Matrix<T>& grad_features, EncoderParams<T>& grads) {
  if (!trace.valid) throw UsageError("encoder backward called without a forward trace");
  if (grad_features.rows() != trace.fc2_input.rows() || grad_features.cols() != params.fc2.weights.rows()) {
    throw InvalidShape("encoder upstream gradient shape mismatch");
  }

  grads.fc2.weights.noalias() += grad_features.transpose() * trace.fc2_input;
  grads.fc2.bias += grad_features.colwise().sum().transpose();
  Matrix<T> dh = grad_features * params.fc2.weights;
  if (trace.dropout_mask.size() > 0) dh = dh.cwiseProduct(trace.dropout_mask);
  dh = (trace.fc1_output.array() > T(0)).select(dh, T(0));
  grads.fc1.weights.noalias() += dh.transpose() * trace.flat;
  grads.fc1.bias += dh.colwise().sum().transpose();
  const Matrix<T> dflat = dh * params.fc1.weights;

  const auto& top = trace.relu_output[3];
  FeatureMaps<T> dx(top.channels, top.height, top.width, top.count);
  const Index plane = dx.plane();
  for (int n = 0; n < dx.count; ++n) {
    for (int c = 0; c < dx.channels; ++c) {
      dx.data.row(c).segment(n * plane, plane) = dflat.row(n).segment(c * plane, plane);
    }
  }

  for (int l = 3; l >= 0; --l) {
    if (l < 3) dx = kernels::maxpool_backward(dx, trace.pool[l]);
    dx.data = (trace.relu_output[l].data.array() > T(0)).select(dx.data, T(0));
    dx = kernels::batchnorm_backward(dx, params.bn[l], trace.bn[l], grads.bn[l].gamma, grads.bn[l].beta);
    dx = kernels::conv2d_backward(trace.conv_input[l], params.conv[l].kernels, params.conv[l].geometry, dx,
                                  grads.conv[l].kernels, grads.conv[l].bias);
  }
  return dx;
}

template <class T>
Vector<T> encode_patch(const Patch& patch, EncoderParams<T>& params, Mode mode) {
  const int channels = static_cast<int>(patch.pixels.size() / (kPatchSize * kPatchSize));
  const auto maps = pack_patches<T>({&patch}, channels);
  const Matrix<T> y = encode_batch(maps, params, EncodeOptions{mode, false, 0}, static_cast<EncoderTrace<T>*>(nullptr));
  return y.row(0).transpose();
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template FeatureMaps<float> pack_patches(const std::vector<const Patch*>&, int, const std::vector<float>&);
template FeatureMaps<double> pack_patches(const std::vector<const Patch*>&, int, const std::vector<float>&);
template Matrix<float> encode_batch(const FeatureMaps<float>&, EncoderParams<float>&, const EncodeOptions&,
                                    EncoderTrace<float>*);
template Matrix<double> encode_batch(const FeatureMaps<double>&, EncoderParams<double>&, const EncodeOptions&,
                                     EncoderTrace<double>*);
template FeatureMaps<float> encode_batch_backward(const EncoderTrace<float>&, const EncoderParams<float>&,
                                                  const Matrix<float>&, EncoderParams<float>&);
template FeatureMaps<double> encode_batch_backward(const EncoderTrace<double>&, const EncoderParams<double>&,
                                                   const Matrix<double>&, EncoderParams<double>&);
template Vector<float> encode_patch(const Patch&, EncoderParams<float>&, Mode);
template Vector<double> encode_patch(const Patch&, EncoderParams<double>&, Mode);

}  // namespace scriptid
