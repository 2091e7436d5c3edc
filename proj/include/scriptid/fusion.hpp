#pragma once

#include <string>
#include <vector>

#include "scriptid/linalg.hpp"
#include "scriptid/params.hpp"

namespace scriptid {

/// Scores one feature branch: v = w^T tanh(W f + b).
template <class T>
struct BranchScorer {
  Matrix<T> w_hidden;  // width x feature
  Vector<T> b_hidden;
  Vector<T> w_out;
};

/// Global-feature projection (last top-layer cell -> feature width) and, for the
/// dynamically weighted model, one coherence scorer per branch.
template <class T>
struct FusionParams {
  Matrix<T> projection;  // feature x lstm_hidden
  Vector<T> projection_bias;
  bool has_scorers = true;
  BranchScorer<T> local;
  BranchScorer<T> global;

  static FusionParams zeros(int lstm_hidden, int feature, int width, bool with_scorers);

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
    const int feat = static_cast<int>(s.projection.rows());
    f(p + "global_projection.weights", ParamKind::weight,
      std::vector<int>{feat, static_cast<int>(s.projection.cols())}, s.projection);
    f(p + "global_projection.bias", ParamKind::bias, std::vector<int>{feat}, s.projection_bias);
    if (!s.has_scorers) return;
    for (auto [name, br] : {std::pair{"local.", &s.local}, std::pair{"global.", &s.global}}) {
      const int width = static_cast<int>(br->w_hidden.rows());
      f(p + name + "W", ParamKind::weight, std::vector<int>{width, static_cast<int>(br->w_hidden.cols())},
        br->w_hidden);
      f(p + name + "b", ParamKind::bias, std::vector<int>{width}, br->b_hidden);
      f(p + name + "w", ParamKind::weight, std::vector<int>{width}, br->w_out);
    }
  }
};

template <class T>
struct Coherence {
  T local = T(0.5);
  T global = T(0.5);
};

/// Lf_d = p_d * Y_d, row by row.
template <class T>
Matrix<T> local_features(const Vector<T>& p, const Matrix<T>& features);

template <class T>
struct GlobalFeatureTrace {
  Vector<T> cell;
  Vector<T> output;
};

/// Gf = tanh(P c + b).
template <class T>
Vector<T> global_feature(const Vector<T>& final_cell, const FusionParams<T>& params,
                         GlobalFeatureTrace<T>* trace = nullptr);

/// Returns dL/dcell and accumulates projection gradients.
template <class T>
Vector<T> global_feature_backward(const GlobalFeatureTrace<T>& trace, const FusionParams<T>& params,
                                  const Vector<T>& grad_output, FusionParams<T>& grads);

/// Scalar score of one branch.
template <class T>
T branch_score(const Vector<T>& feature, const BranchScorer<T>& scorer);

/// Two-way softmax over (local, global) branch scores.
template <class T>
Coherence<T> coherence_from_scores(T v_local, T v_global);

template <class T>
Coherence<T> coherence_scores(const Vector<T>& local, const Vector<T>& global, const FusionParams<T>& params);

/// phi = c_local * Lf + c_global * Gf.
template <class T>
Vector<T> fuse(const Vector<T>& local, const Vector<T>& global, const Coherence<T>& c);

/// Dynamic fusion of every patch row, with all intermediates kept for backprop.
template <class T>
struct FusionTrace {
  Matrix<T> local;               // D x feature
  Vector<T> global;              // feature
  Matrix<T> local_activation;    // D x width: tanh(W_l Lf_d + b_l)
  Vector<T> global_activation;   // width
  Vector<T> c_local;             // D
  Vector<T> c_global;            // D
};

template <class T>
Matrix<T> fuse_dynamic(const Matrix<T>& local, const Vector<T>& global, const FusionParams<T>& params,
                       FusionTrace<T>* trace = nullptr);

/// Returns (dL/dLocal rows, dL/dGlobal) and accumulates scorer gradients.
template <class T>
std::pair<Matrix<T>, Vector<T>> fuse_dynamic_backward(const FusionTrace<T>& trace, const FusionParams<T>& params,
                                                      const Matrix<T>& grad_fused, FusionParams<T>& grads);

/// Concatenation fusion used by the ablation variants: phi_d = [Lf_d, Gf].
template <class T>
Matrix<T> fuse_concat(const Matrix<T>& local, const Vector<T>& global);

}  // namespace scriptid
