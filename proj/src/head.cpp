#include "scriptid/head.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace scriptid {

template <class T>
HeadParams<T> HeadParams<T>::zeros(int input, int n_classes) {
  return {Matrix<T>::Zero(n_classes, input), Vector<T>::Zero(n_classes)};
}

template <class T>
Matrix<T> patch_distributions(const Matrix<T>& fused, const HeadParams<T>& params) {
  if (fused.cols() != params.w.cols()) throw InvalidShape("head: fused feature width mismatch");
  Matrix<T> logits = fused * params.w.transpose();
  logits.rowwise() += params.b.transpose();
  for (Index d = 0; d < logits.rows(); ++d) {
    auto row = logits.row(d);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    row /= row.sum();
  }
  require_finite(logits, "per-patch class distributions");
  return logits;
}

template <class T>
ClassDistribution<T> aggregate(const Matrix<T>& per_patch, const Vector<T>& p) {
  if (per_patch.rows() != p.size()) throw InvalidShape("aggregate: weight count does not match patch count");
  return {per_patch.transpose() * p, per_patch};
}

template <class T>
T sample_nll(const Vector<T>& z, int label) {
  if (label < 0 || label >= z.size()) throw InvalidInput("label " + std::to_string(label) + " out of range");
  return -std::log(std::max(z(label), T(kProbabilityFloor)));
}

template <class T>
T batch_loss(const std::vector<Vector<T>>& z, const std::vector<int>& labels, T lambda, T weight_sq_norm) {
  if (z.size() != labels.size() || z.empty()) throw InvalidInput("batch loss: need one label per sample");
  T total = 0;
  for (size_t i = 0; i < z.size(); ++i) total += sample_nll(z[i], labels[i]);
  return total / T(z.size()) + lambda * weight_sq_norm;
}

template <class T>
int argmax_class(const Vector<T>& z) {
  if (z.size() == 0) throw InvalidInput("argmax of an empty distribution");
  int best = 0;
  for (Index k = 1; k < z.size(); ++k) {
    if (z(k) > z(best)) best = static_cast<int>(k);
  }
  return best;
}

template <class T>
Vector<T> nll_gradient(const Vector<T>& z, int label, T scale) {
  if (label < 0 || label >= z.size()) throw InvalidInput("label " + std::to_string(label) + " out of range");
  Vector<T> g = Vector<T>::Zero(z.size());
  if (z(label) > T(kProbabilityFloor)) g(label) = -scale / z(label);
  return g;
}

template <class T>
Matrix<T> head_backward(const Matrix<T>& fused, const ClassDistribution<T>& dist, const Vector<T>& p,
                        const Vector<T>& grad_z, const HeadParams<T>& params, HeadParams<T>& grads,
                        Vector<T>& grad_p) {
  // z = sum_d p_d * s_d  =>  dL/dp_d = s_d . dz,  dL/ds_d = p_d dz.
  grad_p += dist.per_patch * grad_z;
  Matrix<T> dlogits = p * grad_z.transpose();
  for (Index d = 0; d < dlogits.rows(); ++d) {
    const auto s = dist.per_patch.row(d);
    const T dot = s.dot(dlogits.row(d));
    dlogits.row(d) = s.cwiseProduct((dlogits.row(d).array() - dot).matrix());
  }
  grads.w.noalias() += dlogits.transpose() * fused;
  grads.b += dlogits.colwise().sum().transpose();
  return dlogits * params.w;
}

#define SCRIPTID_INSTANTIATE(T)                                                                                  \
  template struct HeadParams<T>;                                                                                \
  template Matrix<T> patch_distributions(const Matrix<T>&, const HeadParams<T>&);                               \
  template ClassDistribution<T> aggregate(const Matrix<T>&, const Vector<T>&);                                  \
  template T sample_nll(const Vector<T>&, int);                                                                 \
  template T batch_loss(const std::vector<Vector<T>>&, const std::vector<int>&, T, T);                          \
  template int argmax_class(const Vector<T>&);                                                                  \
  template Vector<T> nll_gradient(const Vector<T>&, int, T);                                                    \
  template Matrix<T> head_backward(const Matrix<T>&, const ClassDistribution<T>&, const Vector<T>&,             \
                                   const Vector<T>&, const HeadParams<T>&, HeadParams<T>&, Vector<T>&);

SCRIPTID_INSTANTIATE(float)
SCRIPTID_INSTANTIATE(double)

#undef SCRIPTID_INSTANTIATE

}  // namespace scriptid
