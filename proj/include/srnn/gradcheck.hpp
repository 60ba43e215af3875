#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "srnn/tensor.hpp"

namespace srnn {

// Central differences per coordinate: (f(x + e_i*eps) - f(x - e_i*eps)) / 2eps.
// Independent of the tape; this is the reference the tape is checked against.
template <typename T, typename F>
Tensor<T> finite_diff_gradient(F&& f, const Tensor<T>& x, T eps) {
  if (!(eps > T(0))) throw ContractError("finite_diff_gradient: eps must be > 0");
  Tensor<T> g(x.shape);
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T fp = f(probe);
    probe[i] = orig - eps;
    const T fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (T(2) * eps);
  }
  return g;
}

// Max elementwise relative error with a floor on the denominator so that
// near-zero entries compare absolutely.
template <typename T>
T gradient_rel_error(const Tensor<T>& got, const Tensor<T>& want,
                     T floor = T(1e-3)) {
  require_same_shape(got, want, "gradient_rel_error");
  T worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const T denom = std::max({std::abs(got[i]), std::abs(want[i]), floor});
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

}  // namespace srnn
