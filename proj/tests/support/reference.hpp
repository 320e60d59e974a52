#pragma once

// Test-only scalar reference implementations and a finite-difference gradient checker.
// Deliberately naive: no im2col, no GEMM, no shared code with the library kernels.

#include <cmath>
#include <functional>
#include <vector>

#include "ussim/tensor/autograd.hpp"
#include "ussim/tensor/rng.hpp"

namespace ussim::testing {

using tensor::Shape;
using tensor::Tensor;
using tensor::Var;

// Direct six-loop cross-correlation. x [B,Cin,H,W], w [Cout,Cin,k,k].
inline Tensor<double> reference_conv2d(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride,
                                       std::size_t pad) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> y({B, Cout, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double s = 0;
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                const long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                s += x.at(b, ci, ih, iw) * w.at(co, ci, i, j);
              }
          y.at(b, co, oh, ow) = s;
        }
  return y;
}

// Scatter-add transposed convolution. x [B,Cin,H,W], w [Cin,Cout,k,k].
inline Tensor<double> reference_conv_transpose2d(const Tensor<double>& x, const Tensor<double>& w,
                                                 std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H - 1) * stride + kh - 2 * pad, Wo = (W - 1) * stride + kw - 2 * pad;
  Tensor<double> y({B, Cout, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t ww = 0; ww < W; ++ww)
          for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long oh = static_cast<long>(h * stride + i) - static_cast<long>(pad);
                const long ow = static_cast<long>(ww * stride + j) - static_cast<long>(pad);
                if (oh < 0 || ow < 0 || oh >= static_cast<long>(Ho) || ow >= static_cast<long>(Wo)) continue;
                y.at(b, co, oh, ow) += x.at(b, ci, h, ww) * w.at(ci, co, i, j);
              }
  return y;
}

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

struct GradCheckResult {
  double relative_error = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::size_t checked = 0;
};

// Central differences of a scalar function of `inputs`, compared with backward().
// `fn` must build a fresh graph on every call.
inline std::vector<GradCheckResult> gradcheck(std::vector<Var<double>> inputs,
                                              const std::function<Var<double>(const std::vector<Var<double>>&)>& fn,
                                              double h = 1e-4) {
  for (auto& v : inputs) v.zero_grad();
  auto loss = fn(inputs);
  tensor::backward(loss);
  std::vector<GradCheckResult> out;
  for (auto& in : inputs) {
    GradCheckResult r;
    if (!in.requires_grad()) {
      out.push_back(r);
      continue;
    }
    const Tensor<double> analytic = in.has_grad() ? in.grad() : Tensor<double>(in.shape());
    double diff2 = 0, a2 = 0, n2 = 0;
    auto& value = in.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + h;
      double fp, fm;
      {
        tensor::NoGradGuard guard;
        fp = fn(inputs).value()[0];
      }
      value[i] = orig - h;
      {
        tensor::NoGradGuard guard;
        fm = fn(inputs).value()[0];
      }
      value[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++r.checked;
    }
    // Both gradients vanishing counts as agreement; fall back to the absolute difference.
    const double denom = std::sqrt(std::max(a2, n2));
    r.relative_error = denom < 1e-9 ? std::sqrt(diff2) : std::sqrt(diff2) / denom;
    out.push_back(r);
  }
  return out;
}

}  // namespace ussim::testing
