#include "scriptid/attention.hpp"

#include <cmath>
#include <limits>

namespace scriptid {

template <class T>
AttentionParams<T> AttentionParams<T>::zeros(int hidden, int width) {
  return {Matrix<T>::Zero(width, hidden), Vector<T>::Zero(width), Vector<T>::Zero(width)};
}

template <class T>
Vector<T> attention_scores(const Matrix<T>& hidden, const AttentionParams<T>& params, AttentionScoreTrace<T>* trace) {
  if (hidden.rows() < 1) throw InvalidInput("attention needs at least one patch");
  if (hidden.cols() != params.w.cols()) throw InvalidShape("attention: hidden width mismatch");
  Matrix<T> act = hidden * params.w.transpose();
  act.rowwise() += params.b.transpose();
  act = act.array().tanh();
  Vector<T> q = act * params.v;
  if (trace) {
    trace->hidden = hidden;
    trace->activation = std::move(act);
  }
  return q;
}

template <class T>
Matrix<T> attention_scores_backward(const AttentionScoreTrace<T>& trace, const AttentionParams<T>& params,
                                    const Vector<T>& grad_scores, AttentionParams<T>& grads) {
  if (grad_scores.size() != trace.activation.rows()) throw InvalidShape("attention backward: score gradient size");
  grads.v.noalias() += trace.activation.transpose() * grad_scores;
  Matrix<T> da = grad_scores * params.v.transpose();
  da.array() *= T(1) - trace.activation.array().square();
  grads.w.noalias() += da.transpose() * trace.hidden;
  grads.b += da.colwise().sum().transpose();
  return da * params.w;
}

template <class T>
AttentionWeights<T> attention_weights(const Vector<T>& scores, const std::vector<bool>& mask) {
  const Index n = scores.size();
  if (!mask.empty() && mask.size() != static_cast<size_t>(n)) throw InvalidShape("attention mask size mismatch");
  const auto live = [&](Index d) { return mask.empty() || mask[static_cast<size_t>(d)]; };
  T top = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (Index d = 0; d < n; ++d) {
    if (live(d)) {
      top = std::max(top, scores(d));
      any = true;
    }
  }
  if (!any) throw InvalidInput("attention weights: every entry is masked");
  AttentionWeights<T> w;
  w.mask = mask.empty() ? std::vector<bool>(static_cast<size_t>(n), true) : mask;
  w.p = Vector<T>::Zero(n);
  T total = 0;
  for (Index d = 0; d < n; ++d) {
    if (!live(d)) continue;
    w.p(d) = std::exp(scores(d) - top);
    total += w.p(d);
  }
  w.p /= total;
  require_finite(w.p, "attention weights");
  return w;
}

template <class T>
Vector<T> attention_weights_backward(const AttentionWeights<T>& weights, const Vector<T>& grad_p) {
  T dot = 0;
  for (Index d = 0; d < weights.p.size(); ++d) {
    if (weights.mask[static_cast<size_t>(d)]) dot += weights.p(d) * grad_p(d);
  }
  Vector<T> dq = Vector<T>::Zero(weights.p.size());
  for (Index d = 0; d < weights.p.size(); ++d) {
    if (weights.mask[static_cast<size_t>(d)]) dq(d) = weights.p(d) * (grad_p(d) - dot);
  }
  return dq;
}

#define SCRIPTID_INSTANTIATE(T)                                                                                   \
  template struct AttentionParams<T>;                                                                            \
  template Vector<T> attention_scores(const Matrix<T>&, const AttentionParams<T>&, AttentionScoreTrace<T>*);     \
  template Matrix<T> attention_scores_backward(const AttentionScoreTrace<T>&, const AttentionParams<T>&,         \
                                               const Vector<T>&, AttentionParams<T>&);                           \
  template AttentionWeights<T> attention_weights(const Vector<T>&, const std::vector<bool>&);                    \
  template Vector<T> attention_weights_backward(const AttentionWeights<T>&, const Vector<T>&);

SCRIPTID_INSTANTIATE(float)
SCRIPTID_INSTANTIATE(double)

#undef SCRIPTID_INSTANTIATE

}  // namespace scriptid
