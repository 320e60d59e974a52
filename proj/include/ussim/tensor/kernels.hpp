#pragma once

// Raw forward/backward kernels on dense NCHW tensors. These know nothing about the
// gradient graph; ops.hpp wraps them. Matrix products go through Eigen.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <type_traits>
#include <utility>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/tensor/tensor.hpp"

namespace ussim::tensor {

struct ConvGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

inline std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || kernel == 0) throw DimensionError("conv: kernel and stride must be positive");
  if (in + 2 * pad < kernel) {
    throw DimensionError("conv: padded input " + std::to_string(in + 2 * pad) + " smaller than kernel " +
                         std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

inline std::size_t conv_transpose_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                              std::size_t pad) {
  if (stride == 0 || kernel == 0) throw DimensionError("conv_transpose: kernel and stride must be positive");
  if (pad >= kernel) throw DimensionError("conv_transpose: pad must be smaller than kernel");
  const auto full = (in - 1) * stride + kernel;
  if (full <= 2 * pad) throw DimensionError("conv_transpose: geometry yields an empty output");
  return full - 2 * pad;
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Batch chunking keeps the column buffer (rows x columns) near this many elements so it
// stays cache resident, while giving each GEMM enough columns.
inline constexpr std::size_t kTargetBufferElems = std::size_t{1} << 18;
inline constexpr std::size_t kMinColumns = 256;

inline std::size_t chunk_size(std::size_t batch, std::size_t pixels, std::size_t rows) {
  const std::size_t cols = std::max(kMinColumns, kTargetBufferElems / std::max<std::size_t>(rows, 1));
  return std::clamp<std::size_t>(cols / std::max<std::size_t>(pixels, 1), 1, batch);
}

// Output positions o in [lo, hi) whose input index o * stride + k - pad lies in [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t pad, std::size_t stride,
                                                       std::size_t in, std::size_t out) {
  const std::size_t lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const std::size_t lim = in + pad;  // o * stride + k < lim
  const std::size_t hi = lim <= k ? 0 : (lim - k + stride - 1) / stride;
  return {std::min(lo, out), std::min(hi, out)};
}

// Image block: n samples of [C, H, W]. Grid: positions (Ho, Wo) of a kernel window with
// the given geometry. cols is [C*kh*kw, n*Ho*Wo].
template <class T>
void im2col(const T* img, std::size_t n, std::size_t C, std::size_t H, std::size_t W, const ConvGeometry& g,
            std::size_t Ho, std::size_t Wo, T* cols) {
  const std::size_t grid = Ho * Wo;
  const std::size_t ncols = n * grid;
  const std::size_t s = g.stride;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      const auto [oh_lo, oh_hi] = valid_range(ki, g.pad, s, H, Ho);
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const auto [ow_lo, ow_hi] = valid_range(kj, g.pad, s, W, Wo);
        T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * ncols;
        for (std::size_t b = 0; b < n; ++b) {
          const T* plane = img + (b * C + c) * H * W;
          T* block = row + b * grid;
          std::fill(block, block + oh_lo * Wo, T(0));
          std::fill(block + oh_hi * Wo, block + grid, T(0));
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            T* out = block + oh * Wo;
            const T* src = plane + (oh * s + ki - g.pad) * W + (ow_lo * s + kj - g.pad);
            std::fill(out, out + ow_lo, T(0));
            std::fill(out + ow_hi, out + Wo, T(0));
            if (s == 1) {
              std::copy_n(src, ow_hi - ow_lo, out + ow_lo);
            } else {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) out[ow] = src[(ow - ow_lo) * s];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds cols into img (img is not cleared).
template <class T>
void col2im(const T* cols, std::size_t n, std::size_t C, std::size_t H, std::size_t W, const ConvGeometry& g,
            std::size_t Ho, std::size_t Wo, T* img) {
  const std::size_t grid = Ho * Wo;
  const std::size_t ncols = n * grid;
  const std::size_t s = g.stride;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      const auto [oh_lo, oh_hi] = valid_range(ki, g.pad, s, H, Ho);
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const auto [ow_lo, ow_hi] = valid_range(kj, g.pad, s, W, Wo);
        const T* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * ncols;
        for (std::size_t b = 0; b < n; ++b) {
          T* plane = img + (b * C + c) * H * W;
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            const T* in = row + b * grid + oh * Wo;
            T* dst = plane + (oh * s + ki - g.pad) * W + (ow_lo * s + kj - g.pad);
            if (s == 1) {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow - ow_lo] += in[ow];
            } else {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[(ow - ow_lo) * s] += in[ow];
            }
          }
        }
      }
    }
  }
}

// NCHW block of n samples <-> channel-major [C, n*HW].
template <class T>
void to_channel_major(const T* src, std::size_t n, std::size_t C, std::size_t HW, T* dst) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < C; ++c) std::copy_n(src + (b * C + c) * HW, HW, dst + c * n * HW + b * HW);
}

template <class T>
void from_channel_major(const T* src, std::size_t n, std::size_t C, std::size_t HW, T* dst) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < C; ++c) std::copy_n(src + c * n * HW + b * HW, HW, dst + (b * C + c) * HW);
}

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + to_string(s));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear: y[i,j] = sum_k x[i,k] * W[j,k] + b[j]

template <class T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x.shape(), 2, "linear input");
  detail::require_rank(w.shape(), 2, "linear weight");
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in) {
    throw DimensionError("linear: input width " + std::to_string(in) + " does not match weight " + to_string(w.shape()));
  }
  if (b.shape() != Shape{out}) throw DimensionError("linear: bias shape " + to_string(b.shape()));
  Tensor<T> y({batch, out});
  detail::MatMap<T> Y(y.ptr(), batch, out);
  detail::ConstMatMap<T> X(x.ptr(), batch, in), W(w.ptr(), out, in);
  Y.noalias() = X * W.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b.ptr(), out);
  Y.rowwise() += B;
  return y;
}

template <class T>
void linear_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& w, Tensor<T>* gx, Tensor<T>* gw,
                     Tensor<T>* gb) {
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  detail::ConstMatMap<T> GY(gy.ptr(), batch, out), X(x.ptr(), batch, in), W(w.ptr(), out, in);
  if (gx) {
    detail::MatMap<T> GX(gx->ptr(), batch, in);
    GX.noalias() += GY * W;
  }
  if (gw) {
    detail::MatMap<T> GW(gw->ptr(), out, in);
    GW.noalias() += GY.transpose() * X;
  }
  if (gb) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(gb->ptr(), out);
    GB += GY.colwise().sum();
  }
}

// ---------------------------------------------------------------------------
// Conv2d: weight [Cout, Cin, kh, kw], cross-correlation.

template <class T>
Shape conv2d_output_shape(const Shape& x, const Shape& w, const ConvGeometry& g) {
  detail::require_rank(x, 4, "conv2d input");
  detail::require_rank(w, 4, "conv2d weight");
  if (w[1] != x[1]) throw DimensionError("conv2d: weight expects " + std::to_string(w[1]) + " input channels, got " + std::to_string(x[1]));
  if (w[2] != g.kernel_h || w[3] != g.kernel_w) throw DimensionError("conv2d: weight kernel does not match geometry");
  return {x[0], w[0], conv_output_size(x[2], g.kernel_h, g.stride, g.pad), conv_output_size(x[3], g.kernel_w, g.stride, g.pad)};
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias,
                         const ConvGeometry& g) {
  const Shape ys = conv2d_output_shape<T>(x.shape(), w.shape(), g);
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = ys[1], Ho = ys[2], Wo = ys[3];
  const std::size_t K = Cin * g.kernel_h * g.kernel_w;
  if (bias && bias->shape() != Shape{Cout}) throw DimensionError("conv2d: bias shape " + to_string(bias->shape()));
  Tensor<T> y(ys);
  const std::size_t chunk = detail::chunk_size(B, Ho * Wo, K);
  AlignedVector<T> cols(K * chunk * Ho * Wo), prod(Cout * chunk * Ho * Wo);
  detail::ConstMatMap<T> Wm(w.ptr(), Cout, K);
  for (std::size_t b0 = 0; b0 < B; b0 += chunk) {
    const std::size_t n = std::min(chunk, B - b0);
    const std::size_t ncols = n * Ho * Wo;
    detail::im2col(x.ptr() + b0 * Cin * H * W, n, Cin, H, W, g, Ho, Wo, cols.data());
    detail::MatMap<T> P(prod.data(), Cout, ncols);
    P.noalias() = Wm * detail::ConstMatMap<T>(cols.data(), K, ncols);
    if (bias) P.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias->ptr(), Cout);
    detail::from_channel_major(prod.data(), n, Cout, Ho * Wo, y.ptr() + b0 * Cout * Ho * Wo);
  }
  return y;
}

template <class T>
void conv2d_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g,
                     Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const std::size_t K = Cin * g.kernel_h * g.kernel_w;
  const std::size_t chunk = detail::chunk_size(B, Ho * Wo, K);
  AlignedVector<T> cols(K * chunk * Ho * Wo), gyc(Cout * chunk * Ho * Wo);
  detail::ConstMatMap<T> Wm(w.ptr(), Cout, K);
  for (std::size_t b0 = 0; b0 < B; b0 += chunk) {
    const std::size_t n = std::min(chunk, B - b0);
    const std::size_t ncols = n * Ho * Wo;
    detail::to_channel_major(gy.ptr() + b0 * Cout * Ho * Wo, n, Cout, Ho * Wo, gyc.data());
    detail::ConstMatMap<T> GY(gyc.data(), Cout, ncols);
    if (gb) {
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> GB(gb->ptr(), Cout);
      GB += GY.rowwise().sum();
    }
    if (gw) {
      detail::im2col(x.ptr() + b0 * Cin * H * W, n, Cin, H, W, g, Ho, Wo, cols.data());
      detail::MatMap<T> GW(gw->ptr(), Cout, K);
      GW.noalias() += GY * detail::ConstMatMap<T>(cols.data(), K, ncols).transpose();
    }
    if (gx) {
      detail::MatMap<T> GC(cols.data(), K, ncols);
      GC.noalias() = Wm.transpose() * GY;
      detail::col2im(cols.data(), n, Cin, H, W, g, Ho, Wo, gx->ptr() + b0 * Cin * H * W);
    }
  }
}

// ---------------------------------------------------------------------------
// Transposed conv2d: weight [Cin, Cout, kh, kw]. The adjoint of conv2d with the same
// geometry, mapping an H x W grid onto the (larger) conv input plane.

template <class T>
Shape conv_transpose2d_output_shape(const Shape& x, const Shape& w, const ConvGeometry& g) {
  detail::require_rank(x, 4, "conv_transpose2d input");
  detail::require_rank(w, 4, "conv_transpose2d weight");
  if (w[0] != x[1]) throw DimensionError("conv_transpose2d: weight expects " + std::to_string(w[0]) + " input channels, got " + std::to_string(x[1]));
  if (w[2] != g.kernel_h || w[3] != g.kernel_w) throw DimensionError("conv_transpose2d: weight kernel does not match geometry");
  return {x[0], w[1], conv_transpose_output_size(x[2], g.kernel_h, g.stride, g.pad),
          conv_transpose_output_size(x[3], g.kernel_w, g.stride, g.pad)};
}

template <class T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias,
                                   const ConvGeometry& g) {
  const Shape ys = conv_transpose2d_output_shape<T>(x.shape(), w.shape(), g);
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = ys[1], Ho = ys[2], Wo = ys[3];
  const std::size_t K = Cout * g.kernel_h * g.kernel_w;
  if (bias && bias->shape() != Shape{Cout}) throw DimensionError("conv_transpose2d: bias shape " + to_string(bias->shape()));
  Tensor<T> y(ys);
  const std::size_t chunk = detail::chunk_size(B, H * W, K);
  AlignedVector<T> xc(Cin * chunk * H * W), cols(K * chunk * H * W);
  detail::ConstMatMap<T> Wm(w.ptr(), Cin, K);
  for (std::size_t b0 = 0; b0 < B; b0 += chunk) {
    const std::size_t n = std::min(chunk, B - b0);
    const std::size_t ncols = n * H * W;
    detail::to_channel_major(x.ptr() + b0 * Cin * H * W, n, Cin, H * W, xc.data());
    detail::MatMap<T> C(cols.data(), K, ncols);
    C.noalias() = Wm.transpose() * detail::ConstMatMap<T>(xc.data(), Cin, ncols);
    detail::col2im(cols.data(), n, Cout, Ho, Wo, g, H, W, y.ptr() + b0 * Cout * Ho * Wo);
  }
  if (bias) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < Cout; ++c) {
        T* p = y.ptr() + (b * Cout + c) * Ho * Wo;
        const T v = (*bias)[c];
        for (std::size_t i = 0; i < Ho * Wo; ++i) p[i] += v;
      }
  }
  return y;
}

template <class T>
void conv_transpose2d_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g,
                               Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const std::size_t K = Cout * g.kernel_h * g.kernel_w;
  if (gb) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < Cout; ++c) {
        const T* p = gy.ptr() + (b * Cout + c) * Ho * Wo;
        T s = 0;
        for (std::size_t i = 0; i < Ho * Wo; ++i) s += p[i];
        (*gb)[c] += s;
      }
  }
  if (!gx && !gw) return;
  const std::size_t chunk = detail::chunk_size(B, H * W, K);
  AlignedVector<T> xc(Cin * chunk * H * W), cols(K * chunk * H * W);
  detail::ConstMatMap<T> Wm(w.ptr(), Cin, K);
  for (std::size_t b0 = 0; b0 < B; b0 += chunk) {
    const std::size_t n = std::min(chunk, B - b0);
    const std::size_t ncols = n * H * W;
    detail::im2col(gy.ptr() + b0 * Cout * Ho * Wo, n, Cout, Ho, Wo, g, H, W, cols.data());
    detail::ConstMatMap<T> GC(cols.data(), K, ncols);
    if (gw) {
      detail::to_channel_major(x.ptr() + b0 * Cin * H * W, n, Cin, H * W, xc.data());
      detail::MatMap<T> GW(gw->ptr(), Cin, K);
      GW.noalias() += detail::ConstMatMap<T>(xc.data(), Cin, ncols) * GC.transpose();
    }
    if (gx) {
      detail::MatMap<T> GX(xc.data(), Cin, ncols);
      GX.noalias() = Wm * GC;
      // Accumulate into gx.
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < Cin; ++c) {
          const T* src = xc.data() + c * ncols + b * H * W;
          T* dst = gx->ptr() + ((b0 + b) * Cin + c) * H * W;
          for (std::size_t i = 0; i < H * W; ++i) dst[i] += src[i];
        }
    }
  }
}

// ---------------------------------------------------------------------------
// BatchNorm2d over [B, C, H, W], statistics per channel.

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

// Saved by the training-mode forward for the backward pass.
template <class T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

namespace detail {
template <class T>
using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
}  // namespace detail

template <class T>
Tensor<T> batchnorm2d_train_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                    Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormOptions& opt,
                                    std::type_identity_t<BatchNormCache<T>>* cache) {
  detail::require_rank(x.shape(), 4, "batchnorm2d input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const std::size_t N = B * HW;
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) throw DimensionError("batchnorm2d: affine parameter shape");
  if (N < 2) throw NumericError("batchnorm2d: training mode needs at least 2 values per channel (degenerate variance)");
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(C);
  auto plane = [&](const Tensor<T>& t, std::size_t b, std::size_t c) {
    return detail::ConstArrayMap<T>(t.ptr() + (b * C + c) * HW, static_cast<Eigen::Index>(HW));
  };
  for (std::size_t c = 0; c < C; ++c) {
    // Statistics accumulate in double.
    double sum = 0;
    for (std::size_t b = 0; b < B; ++b) sum += plane(x, b, c).template cast<double>().sum();
    const double mean = sum / static_cast<double>(N);
    double sq = 0;
    for (std::size_t b = 0; b < B; ++b) sq += (plane(x, b, c).template cast<double>() - mean).square().sum();
    const double var = sq / static_cast<double>(N);
    const double istd = 1.0 / std::sqrt(var + opt.eps);
    inv_std[c] = static_cast<T>(istd);
    const T m = static_cast<T>(mean), is = static_cast<T>(istd);
    for (std::size_t b = 0; b < B; ++b) {
      detail::ArrayMap<T> h(xhat.ptr() + (b * C + c) * HW, static_cast<Eigen::Index>(HW));
      detail::ArrayMap<T> q(y.ptr() + (b * C + c) * HW, static_cast<Eigen::Index>(HW));
      h = (plane(x, b, c) - m) * is;
      q = gamma[c] * h + beta[c];
    }
    const double unbiased = sq / static_cast<double>(N - 1);
    running_mean[c] = static_cast<T>((1.0 - opt.momentum) * running_mean[c] + opt.momentum * mean);
    running_var[c] = static_cast<T>((1.0 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class T>
void batchnorm2d_train_backward(const Tensor<T>& gy, const Tensor<T>& gamma, const BatchNormCache<T>& cache,
                                Tensor<T>* gx, Tensor<T>* ggamma, Tensor<T>* gbeta) {
  const std::size_t B = gy.dim(0), C = gy.dim(1), HW = gy.dim(2) * gy.dim(3);
  const double N = static_cast<double>(B * HW);
  const auto n = static_cast<Eigen::Index>(HW);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_g = 0, sum_gh = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto g = detail::ConstArrayMap<T>(gy.ptr() + (b * C + c) * HW, n).template cast<double>();
      const auto h = detail::ConstArrayMap<T>(cache.xhat.ptr() + (b * C + c) * HW, n).template cast<double>();
      sum_g += g.sum();
      sum_gh += (g * h).sum();
    }
    if (ggamma) (*ggamma)[c] += static_cast<T>(sum_gh);
    if (gbeta) (*gbeta)[c] += static_cast<T>(sum_g);
    if (!gx) continue;
    // dx = gamma * istd * (g - mean(g) - xhat * mean(g * xhat))
    const T scale = static_cast<T>(static_cast<double>(gamma[c]) * cache.inv_std[c]);
    const T mg = static_cast<T>(sum_g / N), mgh = static_cast<T>(sum_gh / N);
    for (std::size_t b = 0; b < B; ++b) {
      const detail::ConstArrayMap<T> g(gy.ptr() + (b * C + c) * HW, n);
      const detail::ConstArrayMap<T> h(cache.xhat.ptr() + (b * C + c) * HW, n);
      detail::ArrayMap<T> o(gx->ptr() + (b * C + c) * HW, n);
      o += scale * (g - mg - h * mgh);
    }
  }
}

template <class T>
Tensor<T> batchnorm2d_eval_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                   const Tensor<T>& running_mean, const Tensor<T>& running_var,
                                   const BatchNormOptions& opt) {
  detail::require_rank(x.shape(), 4, "batchnorm2d input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{C} || running_mean.shape() != Shape{C}) throw DimensionError("batchnorm2d: parameter shape");
  Tensor<T> y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const T scale = static_cast<T>(gamma[c] / std::sqrt(static_cast<double>(running_var[c]) + opt.eps));
    const T shift = beta[c] - scale * running_mean[c];
    for (std::size_t b = 0; b < B; ++b) {
      const T* p = x.ptr() + (b * C + c) * HW;
      T* q = y.ptr() + (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) q[i] = scale * p[i] + shift;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <class T>
void relu_backward(const Tensor<T>& gy, const Tensor<T>& y, Tensor<T>& gx) {
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] > T(0)) gx[i] += gy[i];
}

template <class T>
double mse_value(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse_loss");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace ussim::tensor
