#pragma once

// Dense layer kernels used by the patch encoder.
//
// Two implementations share one set of signatures:
//   scriptid::kernels   -- OpenMP-parallel (im2col + GEMM convolution, plane-parallel
//                          pooling, channel-parallel batch norm). Used by the model.
//   scriptid::reference -- straightforward serial loops, kept as the test oracle and
//                          benchmark baseline.
//
// Feature maps for a batch of patches are stored channel-major: row c of `data` holds
// every (patch, y, x) sample of channel c, so column index = (n * H + y) * W + x.

#include <cstdint>
#include <vector>

#include "scriptid/linalg.hpp"

namespace scriptid {

template <class T>
struct FeatureMaps {
  int channels = 0;
  int height = 0;
  int width = 0;
  int count = 0;
  Matrix<T> data;

  FeatureMaps() = default;
  FeatureMaps(int c, int h, int w, int n) : channels(c), height(h), width(w), count(n), data(c, Index(n) * h * w) {
    data.setZero();
  }

  Index plane() const { return Index(height) * width; }
  T& at(int c, int n, int y, int x) { return data(c, (Index(n) * height + y) * width + x); }
  T at(int c, int n, int y, int x) const { return data(c, (Index(n) * height + y) * width + x); }
};

struct ConvGeometry {
  int kernel = 1;
  int stride = 1;
  int pad = 0;
};

struct PoolGeometry {
  int kernel = 3;
  int stride = 2;
  int pad = 1;
};

template <class T>
struct BatchNormParams {
  Vector<T> gamma;
  Vector<T> beta;
  Vector<T> running_mean;
  Vector<T> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  explicit BatchNormParams(int channels = 0)
      : gamma(Vector<T>::Ones(channels)),
        beta(Vector<T>::Zero(channels)),
        running_mean(Vector<T>::Zero(channels)),
        running_var(Vector<T>::Ones(channels)) {}
};

template <class T>
struct BatchNormCache {
  Mode mode = Mode::eval;
  Matrix<T> normalized;  // x-hat
  Vector<T> inv_std;
};

struct PoolIndices {
  int in_height = 0;
  int in_width = 0;
  std::vector<std::int32_t> argmax;  // index within the input plane, one per output sample
};

/// Convolution output extent (floor division).
int conv_output_size(int in, const ConvGeometry& g);

/// Ceil-mode pooling extent; the last window is dropped if it would start inside the
/// right/bottom padding so that every window covers at least one real pixel.
int pool_output_size(int in, const PoolGeometry& g);

/// Sets the OpenMP team size used by the parallel kernels (1 = serial).
void set_num_threads(int threads);
int num_threads();

namespace kernels {

/// Cross-correlation; `weights` is out x (in * k * k), flattened (in, ky, kx).
template <class T>
FeatureMaps<T> conv2d_forward(const FeatureMaps<T>& input, const Matrix<T>& weights, const Vector<T>& bias,
                              const ConvGeometry& g);

/// Returns the input gradient; parameter gradients are accumulated into `grad_weights`/`grad_bias`.
template <class T>
FeatureMaps<T> conv2d_backward(const FeatureMaps<T>& input, const Matrix<T>& weights, const ConvGeometry& g,
                               const FeatureMaps<T>& grad_output, Matrix<T>& grad_weights, Vector<T>& grad_bias);

template <class T>
FeatureMaps<T> maxpool_forward(const FeatureMaps<T>& input, const PoolGeometry& g, PoolIndices* indices);

template <class T>
FeatureMaps<T> maxpool_backward(const FeatureMaps<T>& grad_output, const PoolIndices& indices);

/// Train mode normalizes with batch statistics over every (patch, y, x) sample of a
/// channel and updates the running statistics; eval mode uses the running statistics.
template <class T>
FeatureMaps<T> batchnorm_forward(const FeatureMaps<T>& input, BatchNormParams<T>& params, Mode mode,
                                 BatchNormCache<T>* cache);

template <class T>
FeatureMaps<T> batchnorm_backward(const FeatureMaps<T>& grad_output, const BatchNormParams<T>& params,
                                  const BatchNormCache<T>& cache, Vector<T>& grad_gamma, Vector<T>& grad_beta);

}  // namespace kernels

namespace reference {

template <class T>
FeatureMaps<T> conv2d_forward(const FeatureMaps<T>& input, const Matrix<T>& weights, const Vector<T>& bias,
                              const ConvGeometry& g);

template <class T>
FeatureMaps<T> conv2d_backward(const FeatureMaps<T>& input, const Matrix<T>& weights, const ConvGeometry& g,
                               const FeatureMaps<T>& grad_output, Matrix<T>& grad_weights, Vector<T>& grad_bias);

template <class T>
FeatureMaps<T> maxpool_forward(const FeatureMaps<T>& input, const PoolGeometry& g, PoolIndices* indices);

template <class T>
FeatureMaps<T> maxpool_backward(const FeatureMaps<T>& grad_output, const PoolIndices& indices);

template <class T>
FeatureMaps<T> batchnorm_forward(const FeatureMaps<T>& input, BatchNormParams<T>& params, Mode mode,
                                 BatchNormCache<T>* cache);

template <class T>
FeatureMaps<T> batchnorm_backward(const FeatureMaps<T>& grad_output, const BatchNormParams<T>& params,
                                  const BatchNormCache<T>& cache, Vector<T>& grad_gamma, Vector<T>& grad_beta);

}  // namespace reference

}  // namespace scriptid
