#pragma once

#include <functional>

#include "gapnet/ops.h"

namespace gapnet {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double tolerance = 0.0;
  bool pass = false;
};

// Compares the taped gradient of a scalar-valued function against central
// finite differences. The function is evaluated twice up front; a mismatch
// means it is not deterministic and is reported as an error. Run this at
// 64-bit: float rounding noise swamps the finite-difference signal.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&, const Context<T>&)>& f,
                           const Tensor<T>& x, double tol, double step = 1e-5);

extern template GradCheckReport grad_check<float>(
    const std::function<Tensor<float>(const Tensor<float>&, const Context<float>&)>&,
    const Tensor<float>&, double, double);
extern template GradCheckReport grad_check<double>(
    const std::function<Tensor<double>(const Tensor<double>&, const Context<double>&)>&,
    const Tensor<double>&, double, double);

}  // namespace gapnet
