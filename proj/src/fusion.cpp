#include "scriptid/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace scriptid {

template <class T>
FusionParams<T> FusionParams<T>::zeros(int lstm_hidden, int feature, int width, bool with_scorers) {
  FusionParams<T> p;
  p.projection = Matrix<T>::Zero(feature, lstm_hidden);
  p.projection_bias = Vector<T>::Zero(feature);
  p.has_scorers = with_scorers;
  if (with_scorers) {
    for (auto* br : {&p.local, &p.global}) {
      br->w_hidden = Matrix<T>::Zero(width, feature);
      br->b_hidden = Vector<T>::Zero(width);
      br->w_out = Vector<T>::Zero(width);
    }
  }
  return p;
}

template <class T>
Matrix<T> local_features(const Vector<T>& p, const Matrix<T>& features) {
  if (p.size() != features.rows()) throw InvalidShape("local features: weight count does not match patch count");
  return p.asDiagonal() * features;
}

template <class T>
Vector<T> global_feature(const Vector<T>& final_cell, const FusionParams<T>& params, GlobalFeatureTrace<T>* trace) {
  if (final_cell.size() != params.projection.cols()) throw InvalidShape("global feature: cell width mismatch");
  Vector<T> gf = (params.projection * final_cell + params.projection_bias).array().tanh();
  if (trace) *trace = GlobalFeatureTrace<T>{final_cell, gf};
  return gf;
}

template <class T>
Vector<T> global_feature_backward(const GlobalFeatureTrace<T>& trace, const FusionParams<T>& params,
                                  const Vector<T>& grad_output, FusionParams<T>& grads) {
  const Vector<T> da = grad_output.cwiseProduct((T(1) - trace.output.array().square()).matrix());
  grads.projection.noalias() += da * trace.cell.transpose();
  grads.projection_bias += da;
  return params.projection.transpose() * da;
}

template <class T>
T branch_score(const Vector<T>& feature, const BranchScorer<T>& scorer) {
  if (feature.size() != scorer.w_hidden.cols()) throw InvalidShape("branch scorer: feature width mismatch");
  const Vector<T> act = (scorer.w_hidden * feature + scorer.b_hidden).array().tanh();
  return scorer.w_out.dot(act);
}

template <class T>
Coherence<T> coherence_from_scores(T v_local, T v_global) {
  const T top = std::max(v_local, v_global);
  const T el = std::exp(v_local - top);
  const T eg = std::exp(v_global - top);
  return {el / (el + eg), eg / (el + eg)};
}

template <class T>
Coherence<T> coherence_scores(const Vector<T>& local, const Vector<T>& global, const FusionParams<T>& params) {
  if (!params.has_scorers) throw UsageError("coherence scores need branch scorers");
  return coherence_from_scores(branch_score(local, params.local), branch_score(global, params.global));
}

template <class T>
Vector<T> fuse(const Vector<T>& local, const Vector<T>& global, const Coherence<T>& c) {
  if (local.size() != global.size()) throw InvalidShape("fuse: local and global widths differ");
  return c.local * local + c.global * global;
}

template <class T>
Matrix<T> fuse_dynamic(const Matrix<T>& local, const Vector<T>& global, const FusionParams<T>& params,
                       FusionTrace<T>* trace) {
  if (!params.has_scorers) throw UsageError("dynamic fusion needs branch scorers");
  if (local.cols() != global.size()) throw InvalidShape("fuse: local and global widths differ");
  const Index steps = local.rows();
  Matrix<T> act_local = local * params.local.w_hidden.transpose();
  act_local.rowwise() += params.local.b_hidden.transpose();
  act_local = act_local.array().tanh();
  const Vector<T> v_local = act_local * params.local.w_out;
  const Vector<T> act_global = (params.global.w_hidden * global + params.global.b_hidden).array().tanh();
  const T v_global = params.global.w_out.dot(act_global);

  Vector<T> c_local(steps), c_global(steps);
  Matrix<T> fused(steps, local.cols());
  for (Index d = 0; d < steps; ++d) {
    const auto c = coherence_from_scores(v_local(d), v_global);
    c_local(d) = c.local;
    c_global(d) = c.global;
    fused.row(d) = c.local * local.row(d) + c.global * global.transpose();
  }
  if (trace) *trace = FusionTrace<T>{local, global, std::move(act_local), act_global, c_local, c_global};
  return fused;
}

template <class T>
std::pair<Matrix<T>, Vector<T>> fuse_dynamic_backward(const FusionTrace<T>& tr, const FusionParams<T>& params,
                                                      const Matrix<T>& grad_fused, FusionParams<T>& grads) {
  const Index steps = tr.local.rows();
  Matrix<T> d_local = tr.c_local.asDiagonal() * grad_fused;
  Vector<T> d_global = grad_fused.transpose() * tr.c_global;

  // Two-way softmax: dv_l = c_l c_g (dc_l - dc_g), dv_g = -dv_l.
  Vector<T> dv_local(steps);
  for (Index d = 0; d < steps; ++d) {
    const T dc_local = grad_fused.row(d).dot(tr.local.row(d));
    const T dc_global = grad_fused.row(d).dot(tr.global.transpose());
    dv_local(d) = tr.c_local(d) * tr.c_global(d) * (dc_local - dc_global);
  }
  const T dv_global = -dv_local.sum();

  // Local scorer, one row per patch.
  grads.local.w_out.noalias() += tr.local_activation.transpose() * dv_local;
  Matrix<T> da_local = dv_local * params.local.w_out.transpose();
  da_local.array() *= T(1) - tr.local_activation.array().square();
  grads.local.w_hidden.noalias() += da_local.transpose() * tr.local;
  grads.local.b_hidden += da_local.colwise().sum().transpose();
  d_local.noalias() += da_local * params.local.w_hidden;

  // Global scorer, shared by every patch.
  grads.global.w_out += dv_global * tr.global_activation;
  const Vector<T> da_global =
      (dv_global * params.global.w_out.array() * (T(1) - tr.global_activation.array().square())).matrix();
  grads.global.w_hidden.noalias() += da_global * tr.global.transpose();
  grads.global.b_hidden += da_global;
  d_global.noalias() += params.global.w_hidden.transpose() * da_global;

  return {std::move(d_local), std::move(d_global)};
}

template <class T>
Matrix<T> fuse_concat(const Matrix<T>& local, const Vector<T>& global) {
  Matrix<T> out(local.rows(), local.cols() + global.size());
  out.leftCols(local.cols()) = local;
  out.rightCols(global.size()).rowwise() = global.transpose();
  return out;
}

#define SCRIPTID_INSTANTIATE(T)                                                                                       \
  template struct FusionParams<T>;                                                                                   \
  template Matrix<T> local_features(const Vector<T>&, const Matrix<T>&);                                             \
  template Vector<T> global_feature(const Vector<T>&, const FusionParams<T>&, GlobalFeatureTrace<T>*);               \
  template Vector<T> global_feature_backward(const GlobalFeatureTrace<T>&, const FusionParams<T>&, const Vector<T>&, \
                                             FusionParams<T>&);                                                      \
  template T branch_score(const Vector<T>&, const BranchScorer<T>&);                                                \
  template Coherence<T> coherence_from_scores(T, T);                                                                 \
  template Coherence<T> coherence_scores(const Vector<T>&, const Vector<T>&, const FusionParams<T>&);                \
  template Vector<T> fuse(const Vector<T>&, const Vector<T>&, const Coherence<T>&);                                  \
  template Matrix<T> fuse_dynamic(const Matrix<T>&, const Vector<T>&, const FusionParams<T>&, FusionTrace<T>*);      \
  template std::pair<Matrix<T>, Vector<T>> fuse_dynamic_backward(const FusionTrace<T>&, const FusionParams<T>&,      \
                                                                 const Matrix<T>&, FusionParams<T>&);                \
  template Matrix<T> fuse_concat(const Matrix<T>&, const Vector<T>&);

SCRIPTID_INSTANTIATE(float)
SCRIPTID_INSTANTIATE(double)

#undef SCRIPTID_INSTANTIATE

}  // namespace scriptid
