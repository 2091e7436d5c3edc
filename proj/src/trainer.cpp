#include "scriptid/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

#include "scriptid/kernels.hpp"

namespace scriptid {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Every iteration allocates the same large activation buffers. glibc would hand them back
// to the kernel on free and fault them in again next time, which costs more than the math.
void keep_freed_memory() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigurationError("learning rate must be positive");
  if (batch_size < 1) throw ConfigurationError("batch size must be at least 1");
  if (max_iterations < 0) throw ConfigurationError("iteration count must be non-negative");
  if (weight_decay < 0) throw ConfigurationError("weight decay must be non-negative");
  if (!(clip_norm > 0)) throw ConfigurationError("clip norm must be positive");
  if (max_patches < 1) throw ConfigurationError("patch cap must be at least 1");
  if (eval_every < 0) throw ConfigurationError("eval interval must be non-negative");
  if (threads < 1) throw ConfigurationError("thread count must be at least 1");
}

AdamState AdamState::for_params(const ModelParams<float>& params) {
  AdamState s;
  for (const auto& t : params.tensors()) {
    if (!is_trainable(t.kind)) continue;
    s.m.push_back(Vector<float>::Zero(t.size));
    s.v.push_back(Vector<float>::Zero(t.size));
  }
  return s;
}

template <class T>
Matrix<T> xavier_uniform(Index rows, Index cols, double fan_in, double fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

template <class T>
void xavier_init(ModelParams<T>& params, Rng& rng) {
  for (auto& t : params.tensors()) {
    Eigen::Map<Vector<T>> data(t.data, t.size);
    if (t.kind == ParamKind::weight) {
      double fan_in = 0, fan_out = 0;
      if (t.dims.size() == 4) {
        const double area = static_cast<double>(t.dims[2]) * t.dims[3];
        fan_in = t.dims[1] * area;
        fan_out = t.dims[0] * area;
      } else if (t.dims.size() == 2) {
        fan_in = t.dims[1];
        fan_out = t.dims[0];
      } else {
        fan_in = t.dims[0];
        fan_out = 1;
      }
      data = Eigen::Map<const Vector<T>>(xavier_uniform<T>(t.size, 1, fan_in, fan_out, rng).data(), t.size);
    } else if (t.kind == ParamKind::bias) {
      if (ends_with(t.name, ".gamma")) {
        data.setOnes();
      } else if (t.name.rfind("lstm.", 0) == 0 && ends_with(t.name, ".b_f")) {
        data.setOnes();
      } else {
        data.setZero();
      }
    } else if (ends_with(t.name, ".running_var")) {
      data.setOnes();
    } else {
      data.setZero();
    }
  }
}

template <class T>
double global_norm(const ModelParams<T>& grads) {
  double sq = 0;
  for (const auto& t : grads.tensors()) {
    if (is_trainable(t.kind)) sq += Eigen::Map<const Vector<T>>(t.data, t.size).template cast<double>().squaredNorm();
  }
  return std::sqrt(sq);
}

template <class T>
double clip_gradients(ModelParams<T>& grads, double clip_norm) {
  if (!(clip_norm > 0)) throw ConfigurationError("clip norm must be positive");
  const double norm = global_norm(grads);
  if (norm > clip_norm) {
    const T scale = static_cast<T>(clip_norm / norm);
    for (auto& t : grads.tensors()) {
      if (is_trainable(t.kind)) Eigen::Map<Vector<T>>(t.data, t.size) *= scale;
    }
  }
  return norm;
}

void adam_step(ModelParams<float>& params, const ModelParams<float>& grads, AdamState& state, double learning_rate,
               const AdamConfig& config) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  if (p.size() != g.size()) throw InvalidShape("adam: gradient set does not mirror the parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const float b1 = static_cast<float>(config.beta1), b2 = static_cast<float>(config.beta2);
  size_t k = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (!is_trainable(p[i].kind)) continue;
    if (k >= state.m.size() || state.m[k].size() != p[i].size || g[i].size != p[i].size) {
      throw InvalidShape("adam: state does not match tensor " + p[i].name);
    }
    Eigen::Map<Vector<float>> w(p[i].data, p[i].size);
    const Eigen::Map<const Vector<float>> grad(g[i].data, g[i].size);
    auto& m = state.m[k];
    auto& v = state.v[k];
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
    for (Index j = 0; j < w.size(); ++j) {
      const double mhat = m(j) / c1;
      const double vhat = v(j) / c2;
      w(j) -= static_cast<float>(learning_rate * mhat / (std::sqrt(vhat) + config.epsilon));
    }
    ++k;
  }
}

template <class T>
Batch<T> make_batch(const std::vector<const LabeledSample*>& samples, const std::vector<float>& pixel_mean,
                    int max_patches, Rng& rng, bool augment) {
  if (samples.empty()) throw InvalidInput("empty batch");
  std::vector<PatchSequence> capped;
  capped.reserve(samples.size());
  Batch<T> b;
  int channels = 0;
  for (const auto* s : samples) {
    if (augment) {
      capped.push_back(cap_patches(extract_patches(jitter_image(s->image, rng), s->id), max_patches, rng));
    } else {
      capped.push_back(cap_patches(s->patches, max_patches, rng));
    }
    if (channels == 0) channels = capped.back().channels;
    if (capped.back().channels != channels) throw InvalidShape("batch mixes channel counts");
    b.lengths.push_back(capped.back().count());
    b.labels.push_back(s->label);
  }
  std::vector<const Patch*> ptrs;
  for (const auto& seq : capped) {
    for (const auto& p : seq.patches) ptrs.push_back(&p);
  }
  b.patches = pack_patches<T>(ptrs, channels, pixel_mean);
  return b;
}

EvalResult evaluate(ModelParams<float>& params, const std::vector<LabeledSample>& samples, const EvalOptions& options) {
  const int n_classes = params.dims.n_classes;
  EvalResult r;
  r.confusion.assign(static_cast<size_t>(n_classes), std::vector<int>(static_cast<size_t>(n_classes), 0));
  r.per_class_accuracy.assign(static_cast<size_t>(n_classes), 0.0);
  if (samples.empty()) return r;
  Rng rng(options.seed);
  double nll = 0;
  const size_t step = static_cast<size_t>(std::max(1, options.batch_size));
  for (size_t start = 0; start < samples.size(); start += step) {
    std::vector<const LabeledSample*> chunk;
    for (size_t i = start; i < std::min(samples.size(), start + step); ++i) chunk.push_back(&samples[i]);
    const Batch<float> b = make_batch<float>(chunk, params.pixel_mean, options.max_patches, rng);
    const auto dists = forward(params, b, ForwardOptions{Mode::eval, false, 0});
    for (size_t i = 0; i < dists.size(); ++i) {
      const int truth = chunk[i]->label;
      if (truth < 0 || truth >= n_classes) throw InvalidInput("label out of range for this model");
      const int pred = argmax_class(dists[i].z);
      r.predictions.push_back(pred);
      ++r.confusion[truth][pred];
      nll += sample_nll(dists[i].z, truth);
    }
  }
  r.samples = static_cast<int>(samples.size());
  int correct = 0;
  for (int k = 0; k < n_classes; ++k) {
    const int row = std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), 0);
    correct += r.confusion[k][k];
    r.per_class_accuracy[k] = row > 0 ? static_cast<double>(r.confusion[k][k]) / row : 0.0;
  }
  r.accuracy = static_cast<double>(correct) / r.samples;
  r.loss = nll / r.samples;
  return r;
}

Prediction predict(ModelParams<float>& params, const LabeledSample& sample, int max_patches, std::uint64_t seed) {
  Rng rng(seed);
  Prediction out;
  out.patches = cap_patches(sample.patches, max_patches, rng);
  std::vector<const Patch*> ptrs;
  for (const auto& p : out.patches.patches) ptrs.push_back(&p);
  Batch<float> b;
  b.patches = pack_patches<float>(ptrs, out.patches.channels, params.pixel_mean);
  b.lengths = {out.patches.count()};
  b.labels = {sample.label};
  ForwardTrace<float> trace;
  forward(params, b, ForwardOptions{Mode::eval, false, 0}, &trace);
  out.trace = std::move(trace.samples.front());
  return out;
}

template <class T>
std::string first_nonfinite_tensor(const ModelParams<T>& params) {
  for (const auto& t : params.tensors()) {
    if (!Eigen::Map<const Vector<T>>(t.data, t.size).allFinite()) return t.name;
  }
  return {};
}

TrainResult train(const std::vector<LabeledSample>& train_set, const std::vector<LabeledSample>& validation_set,
                  int n_classes, int channels, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (train_set.empty()) throw InvalidInput("training set is empty");
  if (n_classes < 2) throw InvalidInput("training needs at least two classes");
  set_num_threads(config.threads);
  keep_freed_memory();

  const ModelDims dims = ModelDims::preset(config.arch, n_classes, channels);
  Rng rng(config.seed);
  TrainResult result;
  if (hooks.initial) {
    if (!(hooks.initial->dims == dims) || hooks.initial->variant != config.variant) {
      throw ConfigurationError("resume parameters do not match the configured architecture");
    }
    result.params = *hooks.initial;
  } else {
    result.params = ModelParams<float>::zeros(dims, config.variant);
    xavier_init(result.params, rng);
    result.params.pixel_mean = compute_pixel_mean(train_set, channels);
  }
  result.adam = hooks.initial_adam ? *hooks.initial_adam : AdamState::for_params(result.params);
  ModelParams<float>& params = result.params;

  auto emit = [&](const nlohmann::json& j) {
    if (hooks.metrics) hooks.metrics(j.dump());
  };
  auto say = [&](const std::string& s) {
    if (hooks.progress) hooks.progress(s);
  };
  const EvalOptions eval_options{config.max_patches, config.seed, config.batch_size};
  auto run_eval = [&](std::int64_t iteration) {
    if (validation_set.empty()) return;
    result.validation_eval = evaluate(params, validation_set, eval_options);
    emit({{"iter", iteration},
          {"split", "validation"},
          {"accuracy", result.validation_eval.accuracy},
          {"loss", result.validation_eval.loss}});
    say("iter " + std::to_string(iteration) + " validation accuracy " + fmt_double(result.validation_eval.accuracy));
  };

  const float lambda = static_cast<float>(config.weight_decay);
  const size_t batch = std::min<size_t>(static_cast<size_t>(config.batch_size), train_set.size());
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  size_t cursor = 0;
  const auto t0 = std::chrono::steady_clock::now();

  std::int64_t iteration = hooks.start_iteration;
  for (int step = 0; step < config.max_iterations; ++step, ++iteration) {
    std::vector<const LabeledSample*> picked;
    for (size_t k = 0; k < batch; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picked.push_back(&train_set[order[cursor++]]);
    }
    const Batch<float> b = make_batch<float>(picked, params.pixel_mean, config.max_patches, rng, config.augment);
    auto fault = [&](const std::string& what) {
      const std::string bad = first_nonfinite_tensor(params);
      return NumericFault(what + " at iteration " + std::to_string(iteration) +
                          (bad.empty() ? std::string(" (parameters finite)") : "; first non-finite tensor: " + bad));
    };
    ForwardTrace<float> trace;
    std::vector<ClassDistribution<float>> dists;
    try {
      dists = forward(params, b, ForwardOptions{Mode::train, config.dropout, rng()}, &trace);
    } catch (const NumericFault& e) {
      throw fault(e.what());
    }
    const float loss = batch_loss(dists, b.labels, lambda, params);
    if (!std::isfinite(loss)) throw fault("non-finite loss");
    ModelParams<float> grads;
    try {
      grads = backward(params, trace, b.labels, lambda);
    } catch (const NumericFault& e) {
      throw fault(e.what());
    }
    if (const std::string bad = first_nonfinite_tensor(grads); !bad.empty()) {
      throw NumericFault("non-finite gradient at iteration " + std::to_string(iteration) + " in " + bad);
    }
    const double norm = clip_gradients(grads, config.clip_norm);
    adam_step(params, grads, result.adam, config.learning_rate);

    int correct = 0;
    for (size_t i = 0; i < dists.size(); ++i) correct += argmax_class(dists[i].z) == b.labels[i];
    const double acc = static_cast<double>(correct) / static_cast<double>(dists.size());
    emit({{"iter", iteration}, {"loss", loss}, {"accuracy", acc}, {"grad_norm", norm}});
    result.final_loss = loss;
    if (step % 50 == 0 || step + 1 == config.max_iterations) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      say("iter " + std::to_string(iteration) + " loss " + fmt_double(loss) + " acc " + fmt_double(acc) + " (" +
          fmt_double(secs) + " s)");
    }
    if (config.eval_every > 0 && (step + 1) % config.eval_every == 0 && step + 1 != config.max_iterations) {
      run_eval(iteration + 1);
    }
  }
  result.iterations = iteration;
  result.train_eval = evaluate(params, train_set, eval_options);
  emit({{"iter", iteration}, {"split", "train"}, {"accuracy", result.train_eval.accuracy},
        {"loss", result.train_eval.loss}});
  run_eval(iteration);
  return result;
}

#define SCRIPTID_INSTANTIATE(T)                                                                        \
  template Matrix<T> xavier_uniform<T>(Index, Index, double, double, Rng&);                            \
  template void xavier_init(ModelParams<T>&, Rng&);                                                    \
  template double global_norm(const ModelParams<T>&);                                                  \
  template double clip_gradients(ModelParams<T>&, double);                                             \
  template Batch<T> make_batch<T>(const std::vector<const LabeledSample*>&, const std::vector<float>&, \
                                  int, Rng&, bool);                                                    \
  template std::string first_nonfinite_tensor(const ModelParams<T>&);

SCRIPTID_INSTANTIATE(float)
SCRIPTID_INSTANTIATE(double)

#undef SCRIPTID_INSTANTIATE

}  // namespace scriptid
