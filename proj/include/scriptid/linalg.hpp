#pragma once

#include <Eigen/Dense>

#include <string>

#include "scriptid/error.hpp"

namespace scriptid {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

enum class Mode { train, eval };

/// Throws NumericFault naming `what` if any entry is NaN or infinite.
template <class Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const std::string& what) {
  if (!x.derived().allFinite()) throw NumericFault("non-finite values in " + what);
}

}  // namespace scriptid
