#include "scriptid/model.hpp"

#include <algorithm>
#include <exception>
#include <tuple>
#include <type_traits>

#include "scriptid/kernels.hpp"

namespace scriptid {

namespace {

void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Samples per gradient-reduction group. Groups are summed in index order, so the
// result does not depend on how many threads processed them.
constexpr int kReduceGroup = 4;

template <class Self>
auto collect_tensors(Self& self) {
  using Scalar = std::conditional_t<std::is_const_v<Self>, const typename std::remove_const_t<Self>::Scalar,
                                    typename std::remove_const_t<Self>::Scalar>;
  std::vector<TensorRef<Scalar>> out;
  auto push = [&out](const std::string& name, ParamKind kind, std::vector<int> dims, auto& tensor) {
    out.push_back(TensorRef<Scalar>{name, kind, std::move(dims), tensor.data(), tensor.size()});
  };
  self.encoder.visit("encoder.", push);
  self.lstm[0].visit("lstm.layer1.", push);
  self.lstm[1].visit("lstm.layer2.", push);
  if (uses_attention(self.variant)) self.attention.visit("attention.", push);
  self.fusion.visit("fusion.", push);
  self.head.visit("head.", push);
  return out;
}

// Gradients of the per-sample (post-encoder) stages.
template <class T>
struct SequenceGrads {
  std::array<LstmLayerParams<T>, 2> lstm;
  AttentionParams<T> attention;
  FusionParams<T> fusion;
  HeadParams<T> head;

  explicit SequenceGrads(const ModelParams<T>& zero)
      : lstm(zero.lstm), attention(zero.attention), fusion(zero.fusion), head(zero.head) {}

  void add_to(ModelParams<T>& g) const {
    for (int l = 0; l < 2; ++l) add_tensors(lstm[l], g.lstm[l]);
    add_tensors(attention, g.attention);
    add_tensors(fusion, g.fusion);
    add_tensors(head, g.head);
  }

  template <class P>
  static void add_tensors(const P& from, P& to) {
    std::vector<std::pair<const T*, Index>> src;
    from.visit("", [&](const std::string&, ParamKind, const std::vector<int>&, const auto& t) {
      src.emplace_back(t.data(), t.size());
    });
    size_t i = 0;
    to.visit("", [&](const std::string&, ParamKind, const std::vector<int>&, auto& t) {
      Eigen::Map<Vector<T>>(t.data(), t.size()) += Eigen::Map<const Vector<T>>(src[i].first, src[i].second);
      ++i;
    });
  }
};

template <class T>
Matrix<T> sequence_backward(const ModelParams<T>& params, const SampleTrace<T>& tr, int label, T scale,
                            SequenceGrads<T>& g) {
  const Index steps = tr.features.rows();
  const Index feat = tr.features.cols();
  const Vector<T> dz = nll_gradient(tr.dist.z, label, scale);
  Vector<T> dp = Vector<T>::Zero(steps);
  const Matrix<T> dfused = head_backward(tr.fused, tr.dist, tr.weights.p, dz, params.head, g.head, dp);

  Matrix<T> dlocal;
  Vector<T> dglobal;
  if (uses_dynamic_fusion(params.variant)) {
    std::tie(dlocal, dglobal) = fuse_dynamic_backward(tr.fusion, params.fusion, dfused, g.fusion);
  } else {
    dlocal = dfused.leftCols(feat);
    dglobal = dfused.rightCols(feat).colwise().sum().transpose();
  }

  // Lf_d = p_d Y_d
  Matrix<T> dfeatures = tr.weights.p.asDiagonal() * dlocal;
  dp += (dlocal.cwiseProduct(tr.features)).rowwise().sum();

  const Vector<T> dcell = global_feature_backward(tr.global, params.fusion, dglobal, g.fusion);

  Matrix<T> dhidden = Matrix<T>::Zero(steps, params.lstm[1].hidden());
  if (uses_attention(params.variant)) {
    const Vector<T> dq = attention_weights_backward(tr.weights, dp);
    dhidden = attention_scores_backward(tr.scores_trace, params.attention, dq, g.attention);
  }
  dfeatures += run_stack_backward(tr.lstm, params.lstm, dhidden, dcell, g.lstm);
  return dfeatures;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full:
      return "full";
    case Variant::variant1:
      return "variant1";
    case Variant::variant2:
      return "variant2";
  }
  return "full";
}

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "variant1") return Variant::variant1;
  if (name == "variant2") return Variant::variant2;
  throw InvalidInput("unknown variant '" + name + "' (expected full, variant1 or variant2)");
}

template <class T>
ModelParams<T> ModelParams<T>::zeros(const ModelDims& dims, Variant variant) {
  if (dims.n_classes < 2) throw InvalidInput("need at least two classes");
  ModelParams<T> p;
  p.dims = dims;
  p.variant = variant;
  p.pixel_mean.assign(static_cast<size_t>(dims.channels), 0.0f);
  p.encoder = EncoderParams<T>::zeros(dims);
  p.lstm[0] = LstmLayerParams<T>::zeros(dims.feature, dims.lstm_hidden);
  p.lstm[1] = LstmLayerParams<T>::zeros(dims.lstm_hidden, dims.lstm_hidden);
  if (uses_attention(variant)) p.attention = AttentionParams<T>::zeros(dims.lstm_hidden, dims.attention);
  p.fusion = FusionParams<T>::zeros(dims.lstm_hidden, dims.feature, dims.fusion, uses_dynamic_fusion(variant));
  const int head_input = uses_dynamic_fusion(variant) ? dims.feature : 2 * dims.feature;
  p.head = HeadParams<T>::zeros(head_input, dims.n_classes);
  return p;
}

template <class T>
std::vector<TensorRef<T>> ModelParams<T>::tensors() {
  return collect_tensors(*this);
}

template <class T>
std::vector<TensorRef<const T>> ModelParams<T>::tensors() const {
  return collect_tensors(*this);
}

template <class T>
std::int64_t ModelParams<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors()) {
    if (is_trainable(t.kind)) n += t.size;
  }
  return n;
}

template <class T>
template <class U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = ModelParams<U>::zeros(dims, variant);
  out.pixel_mean = pixel_mean;
  out.encoder.dropout_rate = encoder.dropout_rate;
  for (int l = 0; l < 4; ++l) {
    out.encoder.bn[l].epsilon = encoder.bn[l].epsilon;
    out.encoder.bn[l].momentum = encoder.bn[l].momentum;
  }
  const auto src = tensors();
  auto dst = out.tensors();
  for (size_t i = 0; i < src.size(); ++i) {
    for (Index j = 0; j < src[i].size; ++j) dst[i].data[j] = static_cast<U>(src[i].data[j]);
  }
  return out;
}

template <class T>
SampleTrace<T> forward_sequence(const ModelParams<T>& params, const Matrix<T>& features) {
  SampleTrace<T> tr;
  const Index steps = features.rows();
  tr.features = features;
  tr.lstm = run_stack(features, params.lstm);
  if (uses_attention(params.variant)) {
    tr.scores = attention_scores(tr.lstm.hidden_per_step, params.attention, &tr.scores_trace);
    tr.weights = attention_weights(tr.scores);
  } else {
    tr.weights.p = Vector<T>::Constant(steps, T(1) / T(steps));
    tr.weights.mask.assign(static_cast<size_t>(steps), true);
  }
  tr.local = local_features(tr.weights.p, features);
  const Vector<T> gf = global_feature(tr.lstm.final_cell_top, params.fusion, &tr.global);
  tr.fused = uses_dynamic_fusion(params.variant) ? fuse_dynamic(tr.local, gf, params.fusion, &tr.fusion)
                                                 : fuse_concat(tr.local, gf);
  tr.dist = aggregate(patch_distributions(tr.fused, params.head), tr.weights.p);
  require_finite(tr.dist.z, "class distribution");
  return tr;
}

template <class T>
std::vector<ClassDistribution<T>> forward(ModelParams<T>& params, const Batch<T>& batch, const ForwardOptions& options,
                                          ForwardTrace<T>* trace) {
  if (batch.lengths.empty()) throw InvalidInput("empty batch");
  int total = 0;
  for (int len : batch.lengths) {
    if (len < 1) throw InvalidInput("every sample needs at least one patch");
    total += len;
  }
  if (total != batch.patches.count) throw InvalidShape("batch lengths do not add up to the packed patch count");

  const Matrix<T> features =
      encode_batch(batch.patches, params.encoder, EncodeOptions{options.mode, options.dropout, options.dropout_seed},
                   trace ? &trace->encoder : nullptr);

  const int n = batch.size();
  std::vector<int> offsets(static_cast<size_t>(n), 0);
  for (int i = 1; i < n; ++i) offsets[i] = offsets[i - 1] + batch.lengths[i - 1];

  std::vector<SampleTrace<T>> samples(static_cast<size_t>(n));
  const ModelParams<T>& cparams = params;
  // Exceptions may not leave an OpenMP region; park them and rethrow the first one.
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (num_threads() > 1)
  for (int i = 0; i < n; ++i) {
    try {
      samples[i] = forward_sequence(cparams, Matrix<T>(features.middleRows(offsets[i], batch.lengths[i])));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  rethrow_first(errors);

  std::vector<ClassDistribution<T>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.dist);
  if (trace) trace->samples = std::move(samples);
  return out;
}

template <class T>
T weight_sq_norm(const ModelParams<T>& params) {
  T total = 0;
  for (const auto& t : params.tensors()) {
    if (t.kind == ParamKind::weight) total += Eigen::Map<const Vector<T>>(t.data, t.size).squaredNorm();
  }
  return total;
}

template <class T>
T batch_loss(const std::vector<ClassDistribution<T>>& dists, const std::vector<int>& labels, T lambda,
             const ModelParams<T>& params) {
  std::vector<Vector<T>> z;
  z.reserve(dists.size());
  for (const auto& d : dists) z.push_back(d.z);
  return batch_loss(z, labels, lambda, lambda != T(0) ? weight_sq_norm(params) : T(0));
}

template <class T>
ModelParams<T> backward(const ModelParams<T>& params, const ForwardTrace<T>& trace, const std::vector<int>& labels,
                        T lambda) {
  const int n = static_cast<int>(trace.samples.size());
  if (labels.size() != trace.samples.size() || n == 0) throw InvalidInput("backward: need one label per sample");
  ModelParams<T> grads = params.zeros_like();
  for (auto& t : grads.tensors()) std::fill(t.data, t.data + t.size, T(0));
  const T scale = T(1) / T(n);

  const int groups = (n + kReduceGroup - 1) / kReduceGroup;
  std::vector<SequenceGrads<T>> group_grads(static_cast<size_t>(groups), SequenceGrads<T>(grads));
  std::vector<Matrix<T>> dfeatures(static_cast<size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(groups));
#pragma omp parallel for schedule(dynamic) num_threads(num_threads()) if (num_threads() > 1)
  for (int gi = 0; gi < groups; ++gi) {
    try {
      for (int i = gi * kReduceGroup; i < std::min(n, (gi + 1) * kReduceGroup); ++i) {
        dfeatures[i] = sequence_backward(params, trace.samples[i], labels[i], scale, group_grads[gi]);
      }
    } catch (...) {
      errors[gi] = std::current_exception();
    }
  }
  rethrow_first(errors);
  for (const auto& g : group_grads) g.add_to(grads);

  Index total = 0;
  for (const auto& d : dfeatures) total += d.rows();
  Matrix<T> dall(total, params.dims.feature);
  Index row = 0;
  for (const auto& d : dfeatures) {
    dall.middleRows(row, d.rows()) = d;
    row += d.rows();
  }
  encode_batch_backward(trace.encoder, params.encoder, dall, grads.encoder);

  if (lambda != T(0)) {
    const auto src = params.tensors();
    auto dst = grads.tensors();
    for (size_t i = 0; i < src.size(); ++i) {
      if (src[i].kind != ParamKind::weight) continue;
      Eigen::Map<Vector<T>>(dst[i].data, dst[i].size) += T(2) * lambda * Eigen::Map<const Vector<T>>(src[i].data, src[i].size);
    }
  }
  return grads;
}

template <class T>
T evaluate_loss(ModelParams<T>& params, const Batch<T>& batch, const ForwardOptions& options, T lambda) {
  return batch_loss(forward(params, batch, options), batch.labels, lambda, params);
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

#define SCRIPTID_INSTANTIATE(T)                                                                                    \
  template std::vector<ClassDistribution<T>> forward(ModelParams<T>&, const Batch<T>&, const ForwardOptions&,     \
                                                     ForwardTrace<T>*);                                           \
  template SampleTrace<T> forward_sequence(const ModelParams<T>&, const Matrix<T>&);                              \
  template T weight_sq_norm(const ModelParams<T>&);                                                               \
  template T batch_loss(const std::vector<ClassDistribution<T>>&, const std::vector<int>&, T,                     \
                        const ModelParams<T>&);                                                                    \
  template ModelParams<T> backward(const ModelParams<T>&, const ForwardTrace<T>&, const std::vector<int>&, T);    \
  template T evaluate_loss(ModelParams<T>&, const Batch<T>&, const ForwardOptions&, T);

SCRIPTID_INSTANTIATE(float)
SCRIPTID_INSTANTIATE(double)

#undef SCRIPTID_INSTANTIATE

}  // namespace scriptid
