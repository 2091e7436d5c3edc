#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scriptid/model.hpp"

namespace scriptid {

struct GradCheckConfig {
  std::uint64_t seed = 7;
  int min_samples = 200;    // parameters probed, spread over every trainable tensor
  int batch = 2;
  int patches_per_sample = 3;
  int n_classes = 3;
  Variant variant = Variant::full;
  std::string arch = "tiny";
  double lambda = 5e-4;
  double step = 1e-6;       // central-difference half step
  double floor = 1e-6;      // denominator floor of the relative error
  double tolerance = 1e-3;
};

struct GradCheckEntry {
  std::string tensor;
  Index index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

/// rel_error = |a - n| / max(|a|, |n|, floor).
struct GradCheckReport {
  std::string scope;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  double tolerance = 0;
  bool pass = false;

  std::vector<GradCheckEntry> worst(int n) const;
  int tensors_covered() const;
};

/// Optional tampering with the analytic gradient before comparison; used to prove the
/// check can fail.
using GradientHook = std::function<void(ModelParams<double>&)>;

/// End-to-end check on a small 64-bit model: batch norm in eval mode, dropout off,
/// loss = mean NLL + lambda * ||w||^2.
GradCheckReport gradient_check(const GradCheckConfig& config, const GradientHook& tamper = {});

/// Per-module checks on random inputs with a random linear read-out as the loss.
/// The encoder check runs batch norm in train mode with a fixed dropout mask.
GradCheckReport check_encoder_gradients(std::uint64_t seed, int min_samples = 200, double tolerance = 1e-4);
GradCheckReport check_lstm_gradients(std::uint64_t seed, int min_samples = 200, double tolerance = 1e-4);
GradCheckReport check_attention_gradients(std::uint64_t seed, int min_samples = 200, double tolerance = 1e-4);
GradCheckReport check_fusion_gradients(std::uint64_t seed, int min_samples = 200, double tolerance = 1e-4);

/// Random 64-bit model for the end-to-end check: Xavier weights plus a small random
/// offset on every bias, peephole and batch-norm tensor, and non-trivial running statistics.
ModelParams<double> random_model(const ModelDims& dims, Variant variant, Rng& rng);

/// Random batch of `batch` samples with `patches` random 32x32 patches each.
Batch<double> random_batch(int batch, int patches, int channels, int n_classes, Rng& rng);

}  // namespace scriptid
