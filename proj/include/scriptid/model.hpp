#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scriptid/attention.hpp"
#include "scriptid/dims.hpp"
#include "scriptid/encoder.hpp"
#include "scriptid/fusion.hpp"
#include "scriptid/head.hpp"
#include "scriptid/lstm.hpp"

namespace scriptid {

/// full:     attention + dynamic local/global weighting
/// variant1: no attention (uniform 1/D) + concatenation fusion
/// variant2: attention + concatenation fusion
enum class Variant { full, variant1, variant2 };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

inline bool uses_attention(Variant v) { return v != Variant::variant1; }
inline bool uses_dynamic_fusion(Variant v) { return v == Variant::full; }

/// A named view of one tensor inside ModelParams.
template <class T>
struct TensorRef {
  std::string name;
  ParamKind kind;
  std::vector<int> dims;
  T* data;
  Index size;
};

template <class T>
struct ModelParams {
  using Scalar = T;

  ModelDims dims;
  Variant variant = Variant::full;
  std::vector<float> pixel_mean;  // per channel, subtracted from patch pixels; empty means zero
  EncoderParams<T> encoder;
  std::array<LstmLayerParams<T>, 2> lstm;
  AttentionParams<T> attention;   // empty for variant1
  FusionParams<T> fusion;
  HeadParams<T> head;

  static ModelParams zeros(const ModelDims& dims, Variant variant);
  ModelParams zeros_like() const { return zeros(dims, variant); }

  /// Every tensor with its canonical dotted name, in a fixed structural order.
  std::vector<TensorRef<T>> tensors();
  std::vector<TensorRef<const T>> tensors() const;

  /// Number of trainable scalars.
  std::int64_t parameter_count() const;

  template <class U>
  ModelParams<U> cast() const;
};

/// Patches of every sample in the batch, packed back to back, plus per-sample sizes.
template <class T>
struct Batch {
  FeatureMaps<T> patches;
  std::vector<int> lengths;
  std::vector<int> labels;

  int size() const { return static_cast<int>(lengths.size()); }
};

template <class T>
struct SampleTrace {
  Matrix<T> features;  // Y, D x feature
  SequenceOutput<T> lstm;
  AttentionScoreTrace<T> scores_trace;
  Vector<T> scores;
  AttentionWeights<T> weights;
  Matrix<T> local;  // Lf
  GlobalFeatureTrace<T> global;
  FusionTrace<T> fusion;
  Matrix<T> fused;  // phi
  ClassDistribution<T> dist;
};

template <class T>
struct ForwardTrace {
  EncoderTrace<T> encoder;
  std::vector<SampleTrace<T>> samples;
};

struct ForwardOptions {
  Mode mode = Mode::eval;
  bool dropout = false;
  std::uint64_t dropout_seed = 0;
};

/// Runs encoder -> LSTM stack -> attention -> fusion -> head for every sample of the batch.
/// `trace` (optional) receives every intermediate; without it only the distributions are kept.
template <class T>
std::vector<ClassDistribution<T>> forward(ModelParams<T>& params, const Batch<T>& batch, const ForwardOptions& options,
                                          ForwardTrace<T>* trace = nullptr);

/// Post-encoder part of the forward pass for one sample, given its patch features.
template <class T>
SampleTrace<T> forward_sequence(const ModelParams<T>& params, const Matrix<T>& features);

/// Sum of squares of every weight-kind tensor (biases, peepholes, batch norm excluded).
template <class T>
T weight_sq_norm(const ModelParams<T>& params);

template <class T>
T batch_loss(const std::vector<ClassDistribution<T>>& dists, const std::vector<int>& labels, T lambda,
             const ModelParams<T>& params);

/// Gradient of the batch loss (mean NLL + lambda * ||w||^2) w.r.t. every trainable tensor.
template <class T>
ModelParams<T> backward(const ModelParams<T>& params, const ForwardTrace<T>& trace, const std::vector<int>& labels,
                        T lambda);

/// Convenience: forward + loss.
template <class T>
T evaluate_loss(ModelParams<T>& params, const Batch<T>& batch, const ForwardOptions& options, T lambda);

}  // namespace scriptid
