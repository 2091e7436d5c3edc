#pragma once

#include <string>
#include <vector>

#include "scriptid/linalg.hpp"
#include "scriptid/params.hpp"

namespace scriptid {

inline constexpr double kProbabilityFloor = 1e-12;

template <class T>
struct HeadParams {
  Matrix<T> w;  // n_classes x input
  Vector<T> b;

  static HeadParams zeros(int input, int n_classes);
  int n_classes() const { return static_cast<int>(w.rows()); }

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
  static void visit_impl(Self& s, const std::string& p, F& f) {
    const int n = static_cast<int>(s.w.rows());
    f(p + "weights", ParamKind::weight, std::vector<int>{n, static_cast<int>(s.w.cols())}, s.w);
    f(p + "bias", ParamKind::bias, std::vector<int>{n}, s.b);
  }
};

template <class T>
struct ClassDistribution {
  Vector<T> z;         // n_classes
  Matrix<T> per_patch; // D x n_classes, each row a softmax
};

/// Row-wise stable softmax of phi W^T + b.
template <class T>
Matrix<T> patch_distributions(const Matrix<T>& fused, const HeadParams<T>& params);

/// z = sum_d p_d * row_d. Masked slots must already carry p_d = 0.
template <class T>
ClassDistribution<T> aggregate(const Matrix<T>& per_patch, const Vector<T>& p);

/// -log(max(z[label], 1e-12)).
template <class T>
T sample_nll(const Vector<T>& z, int label);

/// Mean negative log-likelihood over the batch plus lambda * (sum of squared weights).
template <class T>
T batch_loss(const std::vector<Vector<T>>& z, const std::vector<int>& labels, T lambda, T weight_sq_norm);

/// Index of the largest entry; ties go to the lowest index.
template <class T>
int argmax_class(const Vector<T>& z);

/// Backward of head + aggregation for one sample, given dL/dz. Returns dL/dfused and
/// adds dL/dp into `grad_p`; head gradients are accumulated into `grads`.
template <class T>
Matrix<T> head_backward(const Matrix<T>& fused, const ClassDistribution<T>& dist, const Vector<T>& p,
                        const Vector<T>& grad_z, const HeadParams<T>& params, HeadParams<T>& grads,
                        Vector<T>& grad_p);

/// dL/dz of the clamped NLL for one sample, scaled by `scale`.
template <class T>
Vector<T> nll_gradient(const Vector<T>& z, int label, T scale);

}  // namespace scriptid
