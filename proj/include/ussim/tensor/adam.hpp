#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/tensor/autograd.hpp"

namespace ussim::tensor {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments per parameter, in the same order as the parameter list.
template <class T>
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

// One bias-corrected Adam update. Parameters without a gradient buffer count as zero grad.
template <class T>
void adam_step(std::vector<Var<T>>& params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].has_grad() && !params[k].grad().all_finite()) {
      throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(k));
    }
    if (state.m[k].shape() != params[k].shape()) throw DimensionError("adam_step: moment shape mismatch");
  }

  ++state.step;
  const auto& o = state.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T step_size = static_cast<T>(o.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(o.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].mutable_value();
    auto& m = state.m[k];
    auto& v = state.v[k];
    const bool has = params[k].has_grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T g = has ? params[k].grad()[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

}  // namespace ussim::tensor
