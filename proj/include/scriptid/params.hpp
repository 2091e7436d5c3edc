#pragma once

#include <string>
#include <vector>

namespace scriptid {

/// How a named tensor participates in training.
enum class ParamKind {
  weight,  // trainable, included in the L2 penalty
  bias,    // trainable, no penalty (biases, peepholes, batch-norm affine)
  buffer,  // not trainable (batch-norm running statistics)
};

inline bool is_trainable(ParamKind k) { return k != ParamKind::buffer; }

}  // namespace scriptid
