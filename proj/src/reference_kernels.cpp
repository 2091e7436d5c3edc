// Serial reference versions of the encoder kernels. Deliberately written as direct
// loop nests over the textbook definitions; nothing here is shared with kernels.cpp.

#include <cmath>
#include <limits>
#include <vector>

#include "scriptid/kernels.hpp"

namespace scriptid::reference {

template <class T>
FeatureMaps<T> conv2d_forward(const FeatureMaps<T>& input, const Matrix<T>& weights, const Vector<T>& bias,
                              const ConvGeometry& g) {
  const int k = g.kernel;
  if (weights.cols() != Index(input.channels) * k * k) throw InvalidShape("reference conv: weight shape");
  const int out_h = (input.height + 2 * g.pad - k) / g.stride + 1;
  const int out_w = (input.width + 2 * g.pad - k) / g.stride + 1;
  const int out_c = static_cast<int>(weights.rows());
  FeatureMaps<T> out(out_c, out_h, out_w, input.count);
  for (int n = 0; n < input.count; ++n)
    for (int o = 0; o < out_c; ++o)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          T acc = bias(o);
          for (int c = 0; c < input.channels; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= input.height || ix < 0 || ix >= input.width) continue;
                acc += weights(o, (c * k + ky) * k + kx) * input.at(c, n, iy, ix);
              }
          out.at(o, n, oy, ox) = acc;
        }
  return out;
}

template <class T>
FeatureMaps<T> conv2d_backward(const FeatureMaps<T>& input, const Matrix<T>& weights, const ConvGeometry& g,
                               const FeatureMaps<T>& grad_output, Matrix<T>& grad_weights, Vector<T>& grad_bias) {
  const int k = g.kernel;
  FeatureMaps<T> grad_in(input.channels, input.height, input.width, input.count);
  for (int n = 0; n < input.count; ++n)
    for (int o = 0; o < grad_output.channels; ++o)
      for (int oy = 0; oy < grad_output.height; ++oy)
        for (int ox = 0; ox < grad_output.width; ++ox) {
          const T go = grad_output.at(o, n, oy, ox);
          grad_bias(o) += go;
          for (int c = 0; c < input.channels; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= input.height || ix < 0 || ix >= input.width) continue;
                const Index w = (c * k + ky) * k + kx;
                grad_weights(o, w) += go * input.at(c, n, iy, ix);
                grad_in.at(c, n, iy, ix) += go * weights(o, w);
              }
        }
  return grad_in;
}

// Pads with -inf explicitly and takes a plain max over each window; output extent is
// ceil((H + 2p - k) / s) + 1 without any window-dropping correction, so a window made
// purely of padding would surface as -inf.
template <class T>
FeatureMaps<T> maxpool_forward(const FeatureMaps<T>& input, const PoolGeometry& g, PoolIndices* indices) {
  const auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
  const int out_h = ceil_div(input.height + 2 * g.pad - g.kernel, g.stride) + 1;
  const int out_w = ceil_div(input.width + 2 * g.pad - g.kernel, g.stride) + 1;
  const int ph = (out_h - 1) * g.stride + g.kernel;
  const int pw = (out_w - 1) * g.stride + g.kernel;
  const T neg_inf = -std::numeric_limits<T>::infinity();
  FeatureMaps<T> out(input.channels, out_h, out_w, input.count);
  if (indices) {
    indices->in_height = input.height;
    indices->in_width = input.width;
    indices->argmax.assign(static_cast<size_t>(out.data.size()), -1);
  }
  std::vector<T> padded(static_cast<size_t>(ph) * pw);
  for (int c = 0; c < input.channels; ++c)
    for (int n = 0; n < input.count; ++n) {
      std::fill(padded.begin(), padded.end(), neg_inf);
      for (int y = 0; y < input.height; ++y)
        for (int x = 0; x < input.width; ++x) padded[static_cast<size_t>((y + g.pad) * pw + x + g.pad)] = input.at(c, n, y, x);
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          T best = neg_inf;
          int arg = -1;
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int py = oy * g.stride + ky;
              const int px = ox * g.stride + kx;
              const T v = padded[static_cast<size_t>(py * pw + px)];
              if (v > best) {
                best = v;
                arg = (py - g.pad) * input.width + (px - g.pad);
              }
            }
          out.at(c, n, oy, ox) = best;
          if (indices) {
            indices->argmax[static_cast<size_t>(c * out.data.cols() + (Index(n) * out_h + oy) * out_w + ox)] = arg;
          }
        }
    }
  return out;
}

template <class T>
FeatureMaps<T> maxpool_backward(const FeatureMaps<T>& grad_output, const PoolIndices& indices) {
  FeatureMaps<T> grad_in(grad_output.channels, indices.in_height, indices.in_width, grad_output.count);
  for (int c = 0; c < grad_output.channels; ++c)
    for (int n = 0; n < grad_output.count; ++n)
      for (int oy = 0; oy < grad_output.height; ++oy)
        for (int ox = 0; ox < grad_output.width; ++ox) {
          const Index j = (Index(n) * grad_output.height + oy) * grad_output.width + ox;
          const int arg = indices.argmax[static_cast<size_t>(c * grad_output.data.cols() + j)];
          if (arg < 0) continue;
          grad_in.at(c, n, arg / indices.in_width, arg % indices.in_width) += grad_output.data(c, j);
        }
  return grad_in;
}

template <class T>
FeatureMaps<T> batchnorm_forward(const FeatureMaps<T>& input, BatchNormParams<T>& params, Mode mode,
                                 BatchNormCache<T>* cache) {
  if (mode == Mode::train && input.count < 2) throw ConfigurationError("reference batch norm: batch < 2");
  FeatureMaps<T> out(input.channels, input.height, input.width, input.count);
  Matrix<T> normalized(input.data.rows(), input.data.cols());
  Vector<T> inv_std(input.channels);
  const Index m = input.data.cols();
  for (int c = 0; c < input.channels; ++c) {
    double mean = 0;
    double var = 0;
    if (mode == Mode::train) {
      for (Index j = 0; j < m; ++j) mean += input.data(c, j);
      mean /= double(m);
      for (Index j = 0; j < m; ++j) var += (input.data(c, j) - mean) * (input.data(c, j) - mean);
      var /= double(m);
      params.running_mean(c) = T((1 - params.momentum) * params.running_mean(c) + params.momentum * mean);
      params.running_var(c) =
          T((1 - params.momentum) * params.running_var(c) + params.momentum * var * double(m) / double(m - 1));
    } else {
      mean = params.running_mean(c);
      var = params.running_var(c);
    }
    const double is = 1.0 / std::sqrt(var + params.epsilon);
    inv_std(c) = T(is);
    for (Index j = 0; j < m; ++j) {
      normalized(c, j) = T((input.data(c, j) - mean) * is);
      out.data(c, j) = params.gamma(c) * normalized(c, j) + params.beta(c);
    }
  }
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
  FeatureMaps<T> grad_in(grad_output.channels, grad_output.height, grad_output.width, grad_output.count);
  const Index m = grad_output.data.cols();
  for (int c = 0; c < grad_output.channels; ++c) {
    double sum_dy = 0;
    double sum_dy_xhat = 0;
    for (Index j = 0; j < m; ++j) {
      sum_dy += grad_output.data(c, j);
      sum_dy_xhat += grad_output.data(c, j) * cache.normalized(c, j);
    }
    grad_gamma(c) += T(sum_dy_xhat);
    grad_beta(c) += T(sum_dy);
    for (Index j = 0; j < m; ++j) {
      const double dxhat = grad_output.data(c, j) * params.gamma(c);
      if (cache.mode == Mode::train) {
        // d/dx of (x - mean) / sqrt(var + eps), expanded term by term.
        const double dxhat_mean = sum_dy * params.gamma(c) / double(m);
        const double proj = sum_dy_xhat * params.gamma(c) / double(m);
        grad_in.data(c, j) = T(cache.inv_std(c) * (dxhat - dxhat_mean - cache.normalized(c, j) * proj));
      } else {
        grad_in.data(c, j) = T(dxhat * cache.inv_std(c));
      }
    }
  }
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

}  // namespace scriptid::reference
