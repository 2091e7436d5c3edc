#include "scriptid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "scriptid/trainer.hpp"

namespace scriptid {

namespace {

using Refs = std::vector<TensorRef<double>>;

template <class P>
Refs refs_of(P& params, const std::string& prefix) {
  Refs out;
  params.visit(prefix, [&](const std::string& name, ParamKind kind, std::vector<int> dims, auto& t) {
    out.push_back(TensorRef<double>{name, kind, std::move(dims), t.data(), t.size()});
  });
  return out;
}

void fill_uniform(double* data, Index n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (Index i = 0; i < n; ++i) data[i] = d(rng);
}

template <class M>
void randomize(M& m, double scale, Rng& rng) {
  fill_uniform(m.data(), m.size(), -scale, scale, rng);
}

// Picks at least `min_samples` (tensor, index) probes, spread evenly over tensors.
std::vector<std::pair<size_t, Index>> choose_probes(const Refs& params, int min_samples, Rng& rng) {
  std::vector<size_t> trainable;
  for (size_t i = 0; i < params.size(); ++i) {
    if (is_trainable(params[i].kind)) trainable.push_back(i);
  }
  if (trainable.empty()) throw UsageError("gradient check: nothing to probe");
  Index capacity = 0;
  for (size_t i : trainable) capacity += params[i].size;
  const Index wanted = std::min<Index>(min_samples, capacity);
  Index per = (wanted + static_cast<Index>(trainable.size()) - 1) / static_cast<Index>(trainable.size());
  auto total_for = [&](Index k) {
    Index t = 0;
    for (size_t i : trainable) t += std::min(k, params[i].size);
    return t;
  };
  while (total_for(per) < wanted) ++per;

  std::vector<std::pair<size_t, Index>> probes;
  for (size_t i : trainable) {
    std::vector<Index> all(static_cast<size_t>(params[i].size));
    std::iota(all.begin(), all.end(), Index(0));
    std::vector<Index> pick;
    std::sample(all.begin(), all.end(), std::back_inserter(pick), std::min(per, params[i].size), rng);
    for (Index j : pick) probes.emplace_back(i, j);
  }
  return probes;
}

template <class LossFn>
GradCheckReport compare(const std::string& scope, const Refs& params, const Refs& analytic, LossFn&& loss,
                        int min_samples, double step, double floor, double tolerance, Rng& rng) {
  if (params.size() != analytic.size()) throw InvalidShape("gradient check: gradient set does not mirror parameters");
  GradCheckReport r;
  r.scope = scope;
  r.tolerance = tolerance;
  for (const auto& [ti, j] : choose_probes(params, min_samples, rng)) {
    double* x = params[ti].data + j;
    const double saved = *x;
    *x = saved + step;
    const double up = loss();
    *x = saved - step;
    const double down = loss();
    *x = saved;
    GradCheckEntry e;
    e.tensor = params[ti].name;
    e.index = j;
    e.numeric = (up - down) / (2 * step);
    e.analytic = analytic[ti].data[j];
    e.rel_error = std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
    r.max_rel_error = std::max(r.max_rel_error, e.rel_error);
    r.entries.push_back(std::move(e));
  }
  r.pass = r.max_rel_error <= tolerance;
  return r;
}

template <class M>
double readout(const M& value, const M& weights) {
  return value.cwiseProduct(weights).sum();
}

}  // namespace

std::vector<GradCheckEntry> GradCheckReport::worst(int n) const {
  std::vector<GradCheckEntry> sorted = entries;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.rel_error > b.rel_error; });
  if (static_cast<int>(sorted.size()) > n) sorted.resize(static_cast<size_t>(n));
  return sorted;
}

int GradCheckReport::tensors_covered() const {
  std::set<std::string> names;
  for (const auto& e : entries) names.insert(e.tensor);
  return static_cast<int>(names.size());
}

ModelParams<double> random_model(const ModelDims& dims, Variant variant, Rng& rng) {
  ModelParams<double> p = ModelParams<double>::zeros(dims, variant);
  xavier_init(p, rng);
  for (auto& t : p.tensors()) {
    if (t.kind == ParamKind::bias) {
      Vector<double> offset(t.size);
      fill_uniform(offset.data(), t.size, -0.2, 0.2, rng);
      Eigen::Map<Vector<double>>(t.data, t.size) += offset;
    } else if (t.kind == ParamKind::buffer) {
      const std::string suffix = "running_var";
      const bool var = t.name.size() >= suffix.size() && t.name.ends_with(suffix);
      fill_uniform(t.data, t.size, var ? 0.5 : -0.2, var ? 1.5 : 0.2, rng);
    }
  }
  return p;
}

Batch<double> random_batch(int batch, int patches, int channels, int n_classes, Rng& rng) {
  Batch<double> b;
  b.patches = FeatureMaps<double>(channels, kPatchSize, kPatchSize, batch * patches);
  fill_uniform(b.patches.data.data(), b.patches.data.size(), -0.5, 0.5, rng);
  std::uniform_int_distribution<int> label(0, n_classes - 1);
  for (int i = 0; i < batch; ++i) {
    b.lengths.push_back(patches);
    b.labels.push_back(label(rng));
  }
  return b;
}

GradCheckReport gradient_check(const GradCheckConfig& config, const GradientHook& tamper) {
  Rng rng(config.seed);
  const ModelDims dims = ModelDims::preset(config.arch, config.n_classes);
  ModelParams<double> params = random_model(dims, config.variant, rng);
  const Batch<double> batch = random_batch(config.batch, config.patches_per_sample, dims.channels, config.n_classes, rng);
  const ForwardOptions eval{Mode::eval, false, 0};

  ForwardTrace<double> trace;
  forward(params, batch, eval, &trace);
  ModelParams<double> grads = backward(params, trace, batch.labels, config.lambda);
  if (tamper) tamper(grads);

  auto loss = [&] { return evaluate_loss(params, batch, eval, config.lambda); };
  return compare("model/" + to_string(config.variant), params.tensors(), grads.tensors(), loss, config.min_samples,
                 config.step, config.floor, config.tolerance, rng);
}

GradCheckReport check_encoder_gradients(std::uint64_t seed, int min_samples, double tolerance) {
  Rng rng(seed);
  const ModelDims dims = ModelDims::tiny(3);
  ModelParams<double> model = random_model(dims, Variant::full, rng);
  EncoderParams<double>& params = model.encoder;
  const int n = 4;
  FeatureMaps<double> input(dims.channels, kPatchSize, kPatchSize, n);
  randomize(input.data, 0.5, rng);
  Matrix<double> r(n, dims.feature);
  randomize(r, 1.0, rng);
  const EncodeOptions opts{Mode::train, true, 1234};

  EncoderTrace<double> trace;
  const Matrix<double> y = encode_batch(input, params, opts, &trace);
  EncoderParams<double> grads = EncoderParams<double>::zeros(dims);
  for (auto& t : refs_of(grads, "")) std::fill(t.data, t.data + t.size, 0.0);
  encode_batch_backward(trace, params, r, grads);

  auto loss = [&] { return readout(encode_batch(input, params, opts, static_cast<EncoderTrace<double>*>(nullptr)), r); };
  return compare("encoder", refs_of(params, "encoder."), refs_of(grads, "encoder."), loss, min_samples, 1e-5, 1e-5,
                 tolerance, rng);
}

GradCheckReport check_lstm_gradients(std::uint64_t seed, int min_samples, double tolerance) {
  Rng rng(seed);
  const int in = 8, hidden = 8, steps = 2;
  std::array<LstmLayerParams<double>, 2> params{LstmLayerParams<double>::zeros(in, hidden),
                                                LstmLayerParams<double>::zeros(hidden, hidden)};
  for (auto& layer : params) {
    for (auto& t : refs_of(layer, "")) fill_uniform(t.data, t.size, -0.5, 0.5, rng);
  }
  Matrix<double> x(steps, in), rh(steps, hidden);
  Vector<double> rc(hidden);
  randomize(x, 1.0, rng);
  randomize(rh, 1.0, rng);
  randomize(rc, 1.0, rng);

  const auto out = run_stack(x, params);
  std::array<LstmLayerParams<double>, 2> grads{LstmLayerParams<double>::zeros(in, hidden),
                                               LstmLayerParams<double>::zeros(hidden, hidden)};
  run_stack_backward(out, params, rh, rc, grads);

  auto loss = [&] {
    const auto o = run_stack(x, params);
    return readout(o.hidden_per_step, rh) + o.final_cell_top.dot(rc);
  };
  Refs p = refs_of(params[0], "lstm.layer1."), g = refs_of(grads[0], "lstm.layer1.");
  for (auto& t : refs_of(params[1], "lstm.layer2.")) p.push_back(t);
  for (auto& t : refs_of(grads[1], "lstm.layer2.")) g.push_back(t);
  return compare("lstm", p, g, loss, min_samples, 1e-6, 1e-6, tolerance, rng);
}

GradCheckReport check_attention_gradients(std::uint64_t seed, int min_samples, double tolerance) {
  Rng rng(seed);
  const int hidden = 8, width = 8, steps = 5;
  AttentionParams<double> params = AttentionParams<double>::zeros(hidden, width);
  for (auto& t : refs_of(params, "")) fill_uniform(t.data, t.size, -0.8, 0.8, rng);
  Matrix<double> h(steps, hidden);
  Vector<double> r(steps);
  randomize(h, 1.0, rng);
  randomize(r, 1.0, rng);

  AttentionScoreTrace<double> trace;
  const auto weights = attention_weights(attention_scores(h, params, &trace));
  AttentionParams<double> grads = AttentionParams<double>::zeros(hidden, width);
  attention_scores_backward(trace, params, attention_weights_backward(weights, r), grads);

  auto loss = [&] { return attention_weights(attention_scores(h, params)).p.dot(r); };
  return compare("attention", refs_of(params, "attention."), refs_of(grads, "attention."), loss, min_samples, 1e-6,
                 1e-6, tolerance, rng);
}

GradCheckReport check_fusion_gradients(std::uint64_t seed, int min_samples, double tolerance) {
  Rng rng(seed);
  const int lstm_hidden = 8, feature = 8, width = 8, steps = 4;
  FusionParams<double> params = FusionParams<double>::zeros(lstm_hidden, feature, width, true);
  for (auto& t : refs_of(params, "")) fill_uniform(t.data, t.size, -0.8, 0.8, rng);
  Matrix<double> local(steps, feature), r(steps, feature);
  Vector<double> cell(lstm_hidden);
  randomize(local, 1.0, rng);
  randomize(r, 1.0, rng);
  randomize(cell, 1.0, rng);

  GlobalFeatureTrace<double> gtrace;
  FusionTrace<double> ftrace;
  fuse_dynamic(local, global_feature(cell, params, &gtrace), params, &ftrace);
  FusionParams<double> grads = FusionParams<double>::zeros(lstm_hidden, feature, width, true);
  const auto [dlocal, dglobal] = fuse_dynamic_backward(ftrace, params, r, grads);
  (void)dlocal;
  global_feature_backward(gtrace, params, dglobal, grads);

  auto loss = [&] { return readout(fuse_dynamic(local, global_feature(cell, params), params), r); };
  return compare("fusion", refs_of(params, "fusion."), refs_of(grads, "fusion."), loss, min_samples, 1e-6, 1e-6,
                 tolerance, rng);
}

}  // namespace scriptid
