#pragma once

#include <array>
#include <string>
#include <vector>

#include "scriptid/linalg.hpp"
#include "scriptid/params.hpp"

namespace scriptid {

/// One peephole LSTM layer. Peephole (cell-to-gate) weights are diagonal and stored
/// as vectors.
template <class T>
struct LstmLayerParams {
  Matrix<T> w_xi, w_xf, w_xc, w_xo;  // hidden x input
  Matrix<T> w_hi, w_hf, w_hc, w_ho;  // hidden x hidden
  Vector<T> w_ci, w_cf, w_co;        // peepholes
  Vector<T> b_i, b_f, b_c, b_o;

  static LstmLayerParams zeros(int input, int hidden);
  int hidden() const { return static_cast<int>(w_hi.rows()); }
  int input() const { return static_cast<int>(w_xi.cols()); }

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
    const int h = static_cast<int>(s.w_hi.rows());
    const int in = static_cast<int>(s.w_xi.cols());
    const std::vector<int> xin{h, in}, hh{h, h}, vec{h};
    f(p + "w_xi", ParamKind::weight, xin, s.w_xi);
    f(p + "w_xf", ParamKind::weight, xin, s.w_xf);
    f(p + "w_xc", ParamKind::weight, xin, s.w_xc);
    f(p + "w_xo", ParamKind::weight, xin, s.w_xo);
    f(p + "w_hi", ParamKind::weight, hh, s.w_hi);
    f(p + "w_hf", ParamKind::weight, hh, s.w_hf);
    f(p + "w_hc", ParamKind::weight, hh, s.w_hc);
    f(p + "w_ho", ParamKind::weight, hh, s.w_ho);
    f(p + "w_ci", ParamKind::bias, vec, s.w_ci);
    f(p + "w_cf", ParamKind::bias, vec, s.w_cf);
    f(p + "w_co", ParamKind::bias, vec, s.w_co);
    f(p + "b_i", ParamKind::bias, vec, s.b_i);
    f(p + "b_f", ParamKind::bias, vec, s.b_f);
    f(p + "b_c", ParamKind::bias, vec, s.b_c);
    f(p + "b_o", ParamKind::bias, vec, s.b_o);
  }
};

template <class T>
struct LstmState {
  Vector<T> h;
  Vector<T> c;

  static LstmState zeros(int hidden) { return {Vector<T>::Zero(hidden), Vector<T>::Zero(hidden)}; }
};

/// Gate activations of one step, kept for backpropagation.
template <class T>
struct LstmStepTrace {
  Vector<T> input_gate, forget_gate, candidate, output_gate;
  Vector<T> cell, cell_tanh;
};

/// Per-layer activations over a whole sequence: row t holds step t.
template <class T>
struct LstmLayerTrace {
  Matrix<T> input;    // D x in
  Matrix<T> gate_i, gate_f, gate_g, gate_o;  // D x hidden
  Matrix<T> cell;     // D x hidden
  Matrix<T> cell_tanh;
  Matrix<T> hidden;   // D x hidden
};

template <class T>
struct SequenceOutput {
  Matrix<T> hidden_per_step;  // D x hidden (top layer)
  Vector<T> final_cell_top;
  std::array<LstmLayerTrace<T>, 2> layers;
};

/// One time step:
///   i = s(W_xi x + W_hi h' + w_ci*c' + b_i),   f = s(W_xf x + W_hf h' + w_cf*c' + b_f)
///   c = f*c' + i*tanh(W_xc x + W_hc h' + b_c)
///   o = s(W_xo x + W_ho h' + w_co*c + b_o),    h = o*tanh(c)
template <class T>
LstmState<T> lstm_cell_step(const Vector<T>& x, const LstmState<T>& prev, const LstmLayerParams<T>& params,
                            LstmStepTrace<T>* trace = nullptr);

/// Runs both layers from zero initial state; layer 2 consumes layer-1 hidden outputs.
template <class T>
SequenceOutput<T> run_stack(const Matrix<T>& features, const std::array<LstmLayerParams<T>, 2>& params);

/// Full (untruncated) backpropagation through time. Parameter gradients are
/// accumulated into `grads`; the return value is the gradient w.r.t. `features`.
template <class T>
Matrix<T> run_stack_backward(const SequenceOutput<T>& trace, const std::array<LstmLayerParams<T>, 2>& params,
                             const Matrix<T>& grad_hidden, const Vector<T>& grad_final_cell,
                             std::array<LstmLayerParams<T>, 2>& grads);

}  // namespace scriptid
