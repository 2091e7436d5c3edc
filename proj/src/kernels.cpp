#include "scriptid/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scriptid {

namespace {

// Patches per im2col chunk. Small enough that the scratch matrix stays in L2 at desk width.
constexpr int kChunk = 8;

int g_threads = 1;

// Splits [0, n) into one contiguous block per thread (static schedule).
template <class F>
void for_blocks(Index n, F&& body) {
#ifdef _OPENMP
  const int threads = static_cast<int>(std::min<Index>(g_threads, std::max<Index>(n, 1)));
  if (threads > 1) {
#pragma omp parallel num_threads(threads)
    {
      const Index t = omp_get_thread_num();
      const Index nt = omp_get_num_threads();
      const Index begin = n * t / nt;
      const Index end = n * (t + 1) / nt;
      if (end > begin) body(begin, end);
    }
    return;
  }
#endif
  if (n > 0) body(0, n);
}

template <class F>
void parallel_for(Index n, F&& body) {
  for_blocks(n, [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) body(i);
  });
}

template <class T>
void im2col(const FeatureMaps<T>& in, const ConvGeometry& g, int n0, int n1, int out_h, int out_w, Matrix<T>& cols) {
  const int k = g.kernel;
  const Index out_plane = Index(out_h) * out_w;
  cols.resize(Index(in.channels) * k * k, Index(n1 - n0) * out_plane);
  parallel_for(cols.rows(), [&](Index r) {
    const int c = static_cast<int>(r / (k * k));
    const int ky = static_cast<int>((r / k) % k);
    const int kx = static_cast<int>(r % k);
    T* dst = cols.row(r).data();
    if (g.pad == 0 && g.stride == 1) {
      // Every tap is in range; rows of the window are contiguous runs of the input.
      for (int n = n0; n < n1; ++n) {
        for (int oy = 0; oy < out_h; ++oy, dst += out_w) {
          const T* src = &in.data(c, (Index(n) * in.height + oy + ky) * in.width + kx);
          std::copy(src, src + out_w, dst);
        }
      }
      return;
    }
    for (int n = n0; n < n1; ++n) {
      for (int oy = 0; oy < out_h; ++oy) {
        const int iy = oy * g.stride - g.pad + ky;
        for (int ox = 0; ox < out_w; ++ox) {
          const int ix = ox * g.stride - g.pad + kx;
          *dst++ = (iy >= 0 && iy < in.height && ix >= 0 && ix < in.width) ? in.at(c, n, iy, ix) : T(0);
        }
      }
    }
  });
}

template <class T>
void col2im_add(const Matrix<T>& cols, const ConvGeometry& g, int n0, int n1, int out_h, int out_w,
                FeatureMaps<T>& grad_in) {
  const int k = g.kernel;
  parallel_for(grad_in.channels, [&](Index ci) {
    const int c = static_cast<int>(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols.row((Index(c) * k + ky) * k + kx).data();
        if (g.pad == 0 && g.stride == 1) {
          for (int n = n0; n < n1; ++n) {
            for (int oy = 0; oy < out_h; ++oy, src += out_w) {
              T* dst = &grad_in.data(c, (Index(n) * grad_in.height + oy + ky) * grad_in.width + kx);
              for (int ox = 0; ox < out_w; ++ox) dst[ox] += src[ox];
            }
          }
          continue;
        }
        for (int n = n0; n < n1; ++n) {
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            for (int ox = 0; ox < out_w; ++ox, ++src) {
              const int ix = ox * g.stride - g.pad + kx;
              if (iy >= 0 && iy < grad_in.height && ix >= 0 && ix < grad_in.width) grad_in.at(c, n, iy, ix) += *src;
            }
          }
        }
      }
    }
  });
}

void check_conv_shapes(int in_channels, int height, int width, Index weight_rows, Index weight_cols,
                       const ConvGeometry& g) {
  if (weight_cols != Index(in_channels) * g.kernel * g.kernel) {
    throw InvalidShape("convolution weights do not match input channels");
  }
  if (weight_rows < 1 || g.stride < 1 || g.kernel < 1) throw InvalidShape("degenerate convolution");
  if (height + 2 * g.pad < g.kernel || width + 2 * g.pad < g.kernel) {
    throw InvalidShape("convolution input smaller than kernel");
  }
}

}  // namespace

void set_num_threads(int threads) { g_threads = std::max(1, threads); }
int num_threads() { return g_threads; }

int conv_output_size(int in, const ConvGeometry& g) { return (in + 2 * g.pad - g.kernel) / g.stride + 1; }

int pool_output_size(int in, const PoolGeometry& g) {
  const int span = in + 2 * g.pad - g.kernel;
  int out = (span + g.stride - 1) / g.stride + 1;
  if ((out - 1) * g.stride >= in + g.pad) --out;
  return out;
}

namespace kernels {

template <class T>
FeatureMaps<T> conv2d_forward(const FeatureMaps<T>& input, const Matrix<T>& weights, const Vector<T>& bias,
                              const ConvGeometry& g) {
  check_conv_shapes(input.channels, input.height, input.width, weights.rows(), weights.cols(), g);
  if (bias.size() != weights.rows()) throw InvalidShape("convolution bias size mismatch");
  const int out_h = conv_output_size(input.height, g);
  const int out_w = conv_output_size(input.width, g);
  FeatureMaps<T> out(static_cast<int>(weights.rows()), out_h, out_w, input.count);
  const Index out_plane = out.plane();
  Matrix<T> cols;
  for (int n0 = 0; n0 < input.count; n0 += kChunk) {
    const int n1 = std::min(input.count, n0 + kChunk);
    im2col(input, g, n0, n1, out_h, out_w, cols);
    auto dst = out.data.middleCols(n0 * out_plane, (n1 - n0) * out_plane);
    for_blocks(cols.cols(), [&](Index begin, Index end) {
      dst.middleCols(begin, end - begin).noalias() = weights * cols.middleCols(begin, end - begin);
      dst.middleCols(begin, end - begin).colwise() += bias;
    });
  }
  return out;
}

template <class T>
FeatureMaps<T> conv2d_backward(const FeatureMaps<T>& input, const Matrix<T>& weights, const ConvGeometry& g,
                               const FeatureMaps<T>& grad_output, Matrix<T>& grad_weights, Vector<T>& grad_bias) {
  check_conv_shapes(input.channels, input.height, input.width, weights.rows(), weights.cols(), g);
  if (grad_output.channels != weights.rows() || grad_output.count != input.count) {
    throw InvalidShape("convolution output gradient shape mismatch");
  }
  const int out_h = grad_output.height;
  const int out_w = grad_output.width;
  const Index out_plane = grad_output.plane();
  FeatureMaps<T> grad_in(input.channels, input.height, input.width, input.count);
  Matrix<T> cols;
  Matrix<T> grad_cols;
  for (int n0 = 0; n0 < input.count; n0 += kChunk) {
    const int n1 = std::min(input.count, n0 + kChunk);
    im2col(input, g, n0, n1, out_h, out_w, cols);
    const auto go = grad_output.data.middleCols(n0 * out_plane, (n1 - n0) * out_plane);
    for_blocks(weights.rows(), [&](Index begin, Index end) {
      grad_weights.middleRows(begin, end - begin).noalias() += go.middleRows(begin, end - begin) * cols.transpose();
      grad_bias.segment(begin, end - begin) += go.middleRows(begin, end - begin).rowwise().sum();
    });
    grad_cols.resize(cols.rows(), cols.cols());
    for_blocks(cols.cols(), [&](Index begin, Index end) {
      grad_cols.middleCols(begin, end - begin).noalias() = weights.transpose() * go.middleCols(begin, end - begin);
    });
    col2im_add(grad_cols, g, n0, n1, out_h, out_w, grad_in);
  }
  return grad_in;
}

template <class T>
FeatureMaps<T> maxpool_forward(const FeatureMaps<T>& input, const PoolGeometry& g, PoolIndices* indices) {
  if (g.kernel < 1 || g.stride < 1) throw InvalidInput("pool kernel and stride must be positive");
  const int out_h = pool_output_size(input.height, g);
  const int out_w = pool_output_size(input.width, g);
  FeatureMaps<T> out(input.channels, out_h, out_w, input.count);
  if (indices) {
    indices->in_height = input.height;
    indices->in_width = input.width;
    indices->argmax.assign(static_cast<size_t>(out.data.size()), -1);
  }
  const Index planes = Index(input.channels) * input.count;
  parallel_for(planes, [&](Index p) {
    const int c = static_cast<int>(p / input.count);
    const int n = static_cast<int>(p % input.count);
    for (int oy = 0; oy < out_h; ++oy) {
      const int y0 = std::max(oy * g.stride - g.pad, 0);
      const int y1 = std::min(oy * g.stride - g.pad + g.kernel, input.height);
      for (int ox = 0; ox < out_w; ++ox) {
        const int x0 = std::max(ox * g.stride - g.pad, 0);
        const int x1 = std::min(ox * g.stride - g.pad + g.kernel, input.width);
        T best = -std::numeric_limits<T>::infinity();
        int arg = y0 * input.width + x0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            const T v = input.at(c, n, y, x);
            if (v > best) {
              best = v;
              arg = y * input.width + x;
            }
          }
        }
        out.at(c, n, oy, ox) = best;
        if (indices) {
          indices->argmax[static_cast<size_t>(c * out.data.cols() + (Index(n) * out_h + oy) * out_w + ox)] = arg;
        }
      }
    }
  });
  return out;
}

template <class T>
FeatureMaps<T> maxpool_backward(const FeatureMaps<T>& grad_output, const PoolIndices& indices) {
  if (indices.argmax.size() != static_cast<size_t>(grad_output.data.size())) {
    throw UsageError("pool indices do not match the output gradient");
  }
  FeatureMaps<T> grad_in(grad_output.channels, indices.in_height, indices.in_width, grad_output.count);
  const Index in_plane = grad_in.plane();
  const Index out_plane = grad_output.plane();
  parallel_for(grad_output.channels, [&](Index c) {
    const auto* idx = &indices.argmax[static_cast<size_t>(c * grad_output.data.cols())];
    const T* src = grad_output.data.row(c).data();
    T* dst = grad_in.data.row(c).data();
    for (int n = 0; n < grad_output.count; ++n) {
      for (Index j = 0; j < out_plane; ++j) dst[n * in_plane + idx[n * out_plane + j]] += src[n * out_plane + j];
    }
  });
  return grad_in;
}

template <class T>
FeatureMaps<T> batchnorm_forward(const FeatureMaps<T>& input, BatchNormParams<T>& params, Mode mode,
                                 BatchNormCache<T>* cache) {
  if (params.gamma.size() != input.channels) throw InvalidShape("batch norm channel mismatch");
  if (mode == Mode::train && input.count < 2) {
    throw ConfigurationError("train-mode batch norm needs a batch of at least 2 patches");
  }
  FeatureMaps<T> out(input.channels, input.height, input.width, input.count);
  Matrix<T> normalized(input.data.rows(), input.data.cols());
  Vector<T> inv_std(input.channels);
  const Index m = input.data.cols();
  parallel_for(input.channels, [&](Index c) {
    const auto x = input.data.row(c);
    T mean;
    T var;
    if (mode == Mode::train) {
      mean = x.mean();
      var = (x.array() - mean).square().mean();
      const T unbiased = m > 1 ? var * T(m) / T(m - 1) : var;
      params.running_mean(c) = T(1 - params.momentum) * params.running_mean(c) + T(params.momentum) * mean;
      params.running_var(c) = T(1 - params.momentum) * params.running_var(c) + T(params.momentum) * unbiased;
    } else {
      mean = params.running_mean(c);
      var = params.running_var(c);
    }
    inv_std(c) = T(1) / std::sqrt(var + T(params.epsilon));
    normalized.row(c) = (x.array() - mean) * inv_std(c);
    out.data.row(c) = normalized.row(c).array() * params.gamma(c) + params.beta(c);
  });
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <class T>
FeatureMaps<T> batchnorm_backward(const FeatureMaps<T>& grad_output, const BatchNormParams<T>& params,
                                  const BatchNormCache<T>& cache, Vector<T>& grad_gamma, Vector<T>& grad_beta) {
  if (cache.normalized.rows() != grad_output.data.rows() || cache.normalized.cols() != grad_output.data.cols()) {
    throw UsageError("batch norm cache does not match the output gradient");
  }
  FeatureMaps<T> grad_in(grad_output.channels, grad_output.height, grad_output.width, grad_output.count);
  const T m = T(grad_output.data.cols());
  parallel_for(grad_output.channels, [&](Index c) {
    const auto dy = grad_output.data.row(c).array();
    const auto xhat = cache.normalized.row(c).array();
    const T sum_dy = dy.sum();
    const T sum_dy_xhat = (dy * xhat).sum();
    grad_gamma(c) += sum_dy_xhat;
    grad_beta(c) += sum_dy;
    const T scale = params.gamma(c) * cache.inv_std(c);
    if (cache.mode == Mode::train) {
      grad_in.data.row(c) = scale / m * (m * dy - sum_dy - xhat * sum_dy_xhat);
    } else {
      grad_in.data.row(c) = scale * dy;
    }
  });
  return grad_in;
}

#define SCRIPTID_INSTANTIATE(T)                                                                                      \
  template FeatureMaps<T> conv2d_forward(const FeatureMaps<T>&, const Matrix<T>&, const Vector<T>&,                 \
                                         const ConvGeometry&);                                                       \
  template FeatureMaps<T> conv2d_backward(const FeatureMaps<T>&, const Matrix<T>&, const ConvGeometry&,             \
                                          const FeatureMaps<T>&, Matrix<T>&, Vector<T>&);                           \
  template FeatureMaps<T> maxpool_forward(const FeatureMaps<T>&, const PoolGeometry&, PoolIndices*);                \
  template FeatureMaps<T> maxpool_backward(const FeatureMaps<T>&, const PoolIndices&);                              \
  template FeatureMaps<T> batchnorm_forward(const FeatureMaps<T>&, BatchNormParams<T>&, Mode, BatchNormCache<T>*);  \
  template FeatureMaps<T> batchnorm_backward(const FeatureMaps<T>&, const BatchNormParams<T>&,                      \
                                             const BatchNormCache<T>&, Vector<T>&, Vector<T>&);

SCRIPTID_INSTANTIATE(float)
SCRIPTID_INSTANTIATE(double)

#undef SCRIPTID_INSTANTIATE

}  // namespace kernels

}  // namespace scriptid
