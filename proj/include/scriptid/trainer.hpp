#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scriptid/dataset.hpp"
#include "scriptid/model.hpp"

namespace scriptid {

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 32;
  int max_iterations = 20000;
  double weight_decay = 5e-4;
  double clip_norm = 5.0;
  int max_patches = kDefaultMaxPatches;
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  std::string arch = "standard";
  bool augment = false;
  bool dropout = true;
  int eval_every = 0;  // 0: evaluate only at the end
  int threads = 1;

  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moments for every trainable tensor, in ModelParams::tensors() order
/// (buffers skipped).
struct AdamState {
  std::vector<Vector<float>> m;
  std::vector<Vector<float>> v;
  std::int64_t step = 0;

  static AdamState for_params(const ModelParams<float>& params);
};

/// Uniform samples in +-sqrt(6 / (fan_in + fan_out)).
template <class T>
Matrix<T> xavier_uniform(Index rows, Index cols, double fan_in, double fan_out, Rng& rng);

/// Xavier for every weight tensor; biases and peepholes zero, batch norm at identity,
/// LSTM forget-gate bias 1.
template <class T>
void xavier_init(ModelParams<T>& params, Rng& rng);

/// Global L2 norm over every trainable gradient tensor.
template <class T>
double global_norm(const ModelParams<T>& grads);

/// Rescales all gradients when their global norm exceeds `clip_norm`. Returns the
/// norm before clipping.
template <class T>
double clip_gradients(ModelParams<T>& grads, double clip_norm);

/// Bias-corrected Adam update of every trainable tensor.
void adam_step(ModelParams<float>& params, const ModelParams<float>& grads, AdamState& state, double learning_rate,
               const AdamConfig& config = {});

/// Packs the given samples (after capping each to `max_patches` with `rng`) into a batch.
template <class T>
Batch<T> make_batch(const std::vector<const LabeledSample*>& samples, const std::vector<float>& pixel_mean,
                    int max_patches, Rng& rng, bool augment = false);

struct EvalResult {
  double accuracy = 0;
  double loss = 0;  // mean NLL, no penalty
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<int>> confusion;  // rows: truth, columns: prediction
  std::vector<int> predictions;
  int samples = 0;
};

struct EvalOptions {
  int max_patches = kDefaultMaxPatches;
  std::uint64_t seed = 0;  // patch capping
  int batch_size = 32;
};

/// Top-1 evaluation with batch norm in eval mode and no dropout.
EvalResult evaluate(ModelParams<float>& params, const std::vector<LabeledSample>& samples, const EvalOptions& options);

struct TrainResult {
  ModelParams<float> params;
  AdamState adam;
  std::int64_t iterations = 0;
  double final_loss = 0;
  EvalResult train_eval;
  EvalResult validation_eval;
};

/// Receives one JSON object per line for the metrics log.
using MetricsSink = std::function<void(const std::string& json_line)>;

struct TrainHooks {
  MetricsSink metrics;
  std::function<void(const std::string&)> progress;  // human-readable, for stderr
  const ModelParams<float>* initial = nullptr;          // resume from these parameters
  const AdamState* initial_adam = nullptr;
  std::int64_t start_iteration = 0;
};

/// Runs `config.max_iterations` Adam steps on `train_set`. Validation samples (may be
/// empty) are evaluated every `eval_every` iterations and at the end. A non-finite loss
/// or gradient throws NumericFault naming the first non-finite tensor.
TrainResult train(const std::vector<LabeledSample>& train_set, const std::vector<LabeledSample>& validation_set,
                  int n_classes, int channels, const TrainConfig& config, const TrainHooks& hooks = {});

struct Prediction {
  PatchSequence patches;  // after capping, in the order the model saw them
  SampleTrace<float> trace;
};

/// Eval-mode forward pass of one sample with every intermediate kept.
Prediction predict(ModelParams<float>& params, const LabeledSample& sample, int max_patches, std::uint64_t seed);

/// Name of the first tensor containing NaN/inf, or empty.
template <class T>
std::string first_nonfinite_tensor(const ModelParams<T>& params);

}  // namespace scriptid
