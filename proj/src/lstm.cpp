#include "scriptid/lstm.hpp"

#include <cmath>

namespace scriptid {

namespace {

template <class Derived>
auto sigmoid_array(const Eigen::ArrayBase<Derived>& a) {
  using T = typename Derived::Scalar;
  return (T(1) + (-a).exp()).inverse();
}

// Runs one layer over all D rows of `input`.
template <class T>
LstmLayerTrace<T> run_layer(const Matrix<T>& input, const LstmLayerParams<T>& p) {
  const Index steps = input.rows();
  const Index hidden = p.hidden();
  LstmLayerTrace<T> tr;
  tr.input = input;
  // Input projections for every step at once; the recurrence only adds h/c terms.
  Matrix<T> xi = input * p.w_xi.transpose();
  Matrix<T> xf = input * p.w_xf.transpose();
  Matrix<T> xc = input * p.w_xc.transpose();
  Matrix<T> xo = input * p.w_xo.transpose();
  tr.gate_i.resize(steps, hidden);
  tr.gate_f.resize(steps, hidden);
  tr.gate_g.resize(steps, hidden);
  tr.gate_o.resize(steps, hidden);
  tr.cell.resize(steps, hidden);
  tr.cell_tanh.resize(steps, hidden);
  tr.hidden.resize(steps, hidden);

  Vector<T> h = Vector<T>::Zero(hidden);
  Vector<T> c = Vector<T>::Zero(hidden);
  for (Index t = 0; t < steps; ++t) {
    const Vector<T> ai = xi.row(t).transpose() + p.w_hi * h + p.w_ci.cwiseProduct(c) + p.b_i;
    const Vector<T> af = xf.row(t).transpose() + p.w_hf * h + p.w_cf.cwiseProduct(c) + p.b_f;
    const Vector<T> ag = xc.row(t).transpose() + p.w_hc * h + p.b_c;
    const Vector<T> i = sigmoid_array(ai.array()).matrix();
    const Vector<T> f = sigmoid_array(af.array()).matrix();
    const Vector<T> g = ag.array().tanh().matrix();
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    const Vector<T> ao = xo.row(t).transpose() + p.w_ho * h + p.w_co.cwiseProduct(c) + p.b_o;
    const Vector<T> o = sigmoid_array(ao.array()).matrix();
    const Vector<T> tc = c.array().tanh().matrix();
    h = o.cwiseProduct(tc);
    tr.gate_i.row(t) = i.transpose();
    tr.gate_f.row(t) = f.transpose();
    tr.gate_g.row(t) = g.transpose();
    tr.gate_o.row(t) = o.transpose();
    tr.cell.row(t) = c.transpose();
    tr.cell_tanh.row(t) = tc.transpose();
    tr.hidden.row(t) = h.transpose();
  }
  require_finite(tr.hidden, "lstm hidden state");
  require_finite(tr.cell, "lstm cell state");
  return tr;
}

// BPTT through one layer. `grad_hidden` is the external gradient on every h_t,
// `grad_last_cell` the external gradient on c_D. Returns the gradient w.r.t. the input rows.
template <class T>
Matrix<T> backward_layer(const LstmLayerTrace<T>& tr, const LstmLayerParams<T>& p, const Matrix<T>& grad_hidden,
                         const Vector<T>& grad_last_cell, LstmLayerParams<T>& g) {
  const Index steps = tr.hidden.rows();
  const Index hidden = p.hidden();
  Matrix<T> da_i(steps, hidden), da_f(steps, hidden), da_g(steps, hidden), da_o(steps, hidden);

  Vector<T> dh_next = Vector<T>::Zero(hidden);  // from step t+1 through the recurrent weights
  Vector<T> dc_next = grad_last_cell;           // from step t+1 through c_t
  for (Index t = steps - 1; t >= 0; --t) {
    const auto i = tr.gate_i.row(t).transpose().array();
    const auto f = tr.gate_f.row(t).transpose().array();
    const auto gg = tr.gate_g.row(t).transpose().array();
    const auto o = tr.gate_o.row(t).transpose().array();
    const auto tc = tr.cell_tanh.row(t).transpose().array();
    const Vector<T> c_prev = t > 0 ? Vector<T>(tr.cell.row(t - 1).transpose()) : Vector<T>::Zero(hidden);

    const Vector<T> dh = grad_hidden.row(t).transpose() + dh_next;
    const Vector<T> dao = (dh.array() * tc * o * (T(1) - o)).matrix();
    const Vector<T> dc = dc_next + (dh.array() * o * (T(1) - tc.square())).matrix() + dao.cwiseProduct(p.w_co);
    const Vector<T> dai = (dc.array() * gg * i * (T(1) - i)).matrix();
    const Vector<T> daf = (dc.array() * c_prev.array() * f * (T(1) - f)).matrix();
    const Vector<T> dag = (dc.array() * i * (T(1) - gg.square())).matrix();

    da_i.row(t) = dai.transpose();
    da_f.row(t) = daf.transpose();
    da_g.row(t) = dag.transpose();
    da_o.row(t) = dao.transpose();

    g.w_ci += dai.cwiseProduct(c_prev);
    g.w_cf += daf.cwiseProduct(c_prev);
    g.w_co += dao.cwiseProduct(tr.cell.row(t).transpose());

    dc_next = dc.cwiseProduct(f.matrix()) + dai.cwiseProduct(p.w_ci) + daf.cwiseProduct(p.w_cf);
    dh_next = p.w_hi.transpose() * dai + p.w_hf.transpose() * daf + p.w_hc.transpose() * dag +
              p.w_ho.transpose() * dao;
  }

  g.w_xi.noalias() += da_i.transpose() * tr.input;
  g.w_xf.noalias() += da_f.transpose() * tr.input;
  g.w_xc.noalias() += da_g.transpose() * tr.input;
  g.w_xo.noalias() += da_o.transpose() * tr.input;
  if (steps > 1) {
    const auto h_prev = tr.hidden.topRows(steps - 1);
    g.w_hi.noalias() += da_i.bottomRows(steps - 1).transpose() * h_prev;
    g.w_hf.noalias() += da_f.bottomRows(steps - 1).transpose() * h_prev;
    g.w_hc.noalias() += da_g.bottomRows(steps - 1).transpose() * h_prev;
    g.w_ho.noalias() += da_o.bottomRows(steps - 1).transpose() * h_prev;
  }
  g.b_i += da_i.colwise().sum().transpose();
  g.b_f += da_f.colwise().sum().transpose();
  g.b_c += da_g.colwise().sum().transpose();
  g.b_o += da_o.colwise().sum().transpose();

  return da_i * p.w_xi + da_f * p.w_xf + da_g * p.w_xc + da_o * p.w_xo;
}

}  // namespace

template <class T>
LstmLayerParams<T> LstmLayerParams<T>::zeros(int input, int hidden) {
  LstmLayerParams<T> p;
  for (auto* m : {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo}) *m = Matrix<T>::Zero(hidden, input);
  for (auto* m : {&p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho}) *m = Matrix<T>::Zero(hidden, hidden);
  for (auto* v : {&p.w_ci, &p.w_cf, &p.w_co, &p.b_i, &p.b_f, &p.b_c, &p.b_o}) *v = Vector<T>::Zero(hidden);
  return p;
}

template <class T>
LstmState<T> lstm_cell_step(const Vector<T>& x, const LstmState<T>& prev, const LstmLayerParams<T>& p,
                            LstmStepTrace<T>* trace) {
  if (x.size() != p.input() || prev.h.size() != p.hidden() || prev.c.size() != p.hidden()) {
    throw InvalidShape("lstm step: input or state size does not match the layer");
  }
  const Vector<T> i = sigmoid_array((p.w_xi * x + p.w_hi * prev.h + p.w_ci.cwiseProduct(prev.c) + p.b_i).array());
  const Vector<T> f = sigmoid_array((p.w_xf * x + p.w_hf * prev.h + p.w_cf.cwiseProduct(prev.c) + p.b_f).array());
  const Vector<T> g = (p.w_xc * x + p.w_hc * prev.h + p.b_c).array().tanh();
  LstmState<T> next;
  next.c = f.cwiseProduct(prev.c) + i.cwiseProduct(g);
  const Vector<T> o = sigmoid_array((p.w_xo * x + p.w_ho * prev.h + p.w_co.cwiseProduct(next.c) + p.b_o).array());
  const Vector<T> tc = next.c.array().tanh();
  next.h = o.cwiseProduct(tc);
  require_finite(next.h, "lstm step hidden state");
  require_finite(next.c, "lstm step cell state");
  if (trace) *trace = LstmStepTrace<T>{i, f, g, o, next.c, tc};
  return next;
}

template <class T>
SequenceOutput<T> run_stack(const Matrix<T>& features, const std::array<LstmLayerParams<T>, 2>& params) {
  if (features.rows() < 1) throw InvalidInput("lstm stack needs at least one step");
  if (features.cols() != params[0].input() || params[1].input() != params[0].hidden()) {
    throw InvalidShape("lstm stack: feature width does not match layer inputs");
  }
  SequenceOutput<T> out;
  out.layers[0] = run_layer(features, params[0]);
  out.layers[1] = run_layer(out.layers[0].hidden, params[1]);
  out.hidden_per_step = out.layers[1].hidden;
  out.final_cell_top = out.layers[1].cell.row(features.rows() - 1).transpose();
  return out;
}

template <class T>
Matrix<T> run_stack_backward(const SequenceOutput<T>& trace, const std::array<LstmLayerParams<T>, 2>& params,
                             const Matrix<T>& grad_hidden, const Vector<T>& grad_final_cell,
                             std::array<LstmLayerParams<T>, 2>& grads) {
  if (grad_hidden.rows() != trace.hidden_per_step.rows() || grad_hidden.cols() != trace.hidden_per_step.cols()) {
    throw InvalidShape("lstm backward: hidden gradient shape mismatch");
  }
  const Matrix<T> d_layer1_hidden = backward_layer(trace.layers[1], params[1], grad_hidden, grad_final_cell, grads[1]);
  return backward_layer(trace.layers[0], params[0], d_layer1_hidden, Vector<T>(Vector<T>::Zero(params[0].hidden())), grads[0]);
}

template struct LstmLayerParams<float>;
template struct LstmLayerParams<double>;
template LstmState<float> lstm_cell_step(const Vector<float>&, const LstmState<float>&, const LstmLayerParams<float>&,
                                         LstmStepTrace<float>*);
template LstmState<double> lstm_cell_step(const Vector<double>&, const LstmState<double>&,
                                          const LstmLayerParams<double>&, LstmStepTrace<double>*);
template SequenceOutput<float> run_stack(const Matrix<float>&, const std::array<LstmLayerParams<float>, 2>&);
template SequenceOutput<double> run_stack(const Matrix<double>&, const std::array<LstmLayerParams<double>, 2>&);
template Matrix<float> run_stack_backward(const SequenceOutput<float>&, const std::array<LstmLayerParams<float>, 2>&,
                                          const Matrix<float>&, const Vector<float>&,
                                          std::array<LstmLayerParams<float>, 2>&);
template Matrix<double> run_stack_backward(const SequenceOutput<double>&,
                                           const std::array<LstmLayerParams<double>, 2>&, const Matrix<double>&,
                                           const Vector<double>&, std::array<LstmLayerParams<double>, 2>&);

}  // namespace scriptid
