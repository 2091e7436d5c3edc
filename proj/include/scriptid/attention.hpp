#pragma once

#include <string>
#include <vector>

#include "scriptid/linalg.hpp"
#include "scriptid/params.hpp"

namespace scriptid {

/// Additive attention scorer q_d = v^T tanh(W h_d + b).
template <class T>
struct AttentionParams {
  Matrix<T> w;  // attention x hidden
  Vector<T> b;
  Vector<T> v;

  static AttentionParams zeros(int hidden, int width);

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
    const int a = static_cast<int>(s.w.rows());
    f(p + "w", ParamKind::weight, std::vector<int>{a, static_cast<int>(s.w.cols())}, s.w);
    f(p + "b", ParamKind::bias, std::vector<int>{a}, s.b);
    f(p + "v", ParamKind::weight, std::vector<int>{a}, s.v);
  }
};

/// Attention distribution over patches. `mask[d] == false` marks a padded slot.
template <class T>
struct AttentionWeights {
  Vector<T> p;
  std::vector<bool> mask;
};

template <class T>
struct AttentionScoreTrace {
  Matrix<T> hidden;
  Matrix<T> activation;  // tanh(W h + b), D x attention
};

template <class T>
Vector<T> attention_scores(const Matrix<T>& hidden, const AttentionParams<T>& params,
                           AttentionScoreTrace<T>* trace = nullptr);

/// Accumulates parameter gradients and returns dL/dhidden.
template <class T>
Matrix<T> attention_scores_backward(const AttentionScoreTrace<T>& trace, const AttentionParams<T>& params,
                                    const Vector<T>& grad_scores, AttentionParams<T>& grads);

/// Max-shifted softmax over the unmasked entries; masked entries are exactly zero.
/// An empty mask means every entry is live.
template <class T>
AttentionWeights<T> attention_weights(const Vector<T>& scores, const std::vector<bool>& mask = {});

/// Softmax Jacobian-vector product restricted to the unmasked entries.
template <class T>
Vector<T> attention_weights_backward(const AttentionWeights<T>& weights, const Vector<T>& grad_p);

}  // namespace scriptid
