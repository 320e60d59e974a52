#pragma once

// Trainable building blocks shared by the decoder and the autoencoder.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ussim/core/hash.hpp"
#include "ussim/tensor/ops.hpp"
#include "ussim/tensor/rng.hpp"

namespace ussim::models {

using tensor::ConvGeometry;
using tensor::Mode;
using tensor::Shape;
using tensor::Tensor;
using tensor::Var;

template <class T>
Tensor<T> uniform_init(Rng& rng, Shape shape, double fan_in) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(fan_in);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
using ParamVisitor = std::function<void(const std::string&, Var<T>&)>;
template <class T>
using BufferVisitor = std::function<void(const std::string&, Tensor<T>&)>;

template <class T>
struct Dense {
  Var<T> weight;  // [out, in]
  Var<T> bias;    // [out]
  bool activation = true;

  Dense() = default;
  Dense(std::size_t in, std::size_t out, bool relu, Rng& rng)
      : weight(uniform_init<T>(rng, {out, in}, static_cast<double>(in)), true),
        bias(Tensor<T>({out}), true),
        activation(relu) {}

  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }

  Var<T> forward(const Var<T>& x) const {
    auto y = tensor::linear(x, weight, bias);
    return activation ? tensor::relu(y) : y;
  }

  Tensor<T> infer(const Tensor<T>& x) const {
    auto y = tensor::linear_forward(x, weight.value(), bias.value());
    return activation ? tensor::relu_forward(y) : y;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

enum class ConvKind { kConv, kTranspose };

// Convolution, optionally followed by ReLU then BatchNorm.
template <class T>
struct ConvLayer {
  ConvKind kind = ConvKind::kConv;
  ConvGeometry geometry;
  Var<T> weight;  // conv [Cout, Cin, k, k]; transpose [Cin, Cout, k, k]
  Var<T> bias;    // [Cout]
  bool relu_bn = true;
  Var<T> gamma, beta;
  Tensor<T> running_mean, running_var;

  ConvLayer() = default;
  ConvLayer(ConvKind k, std::size_t cin, std::size_t cout, ConvGeometry g, bool with_relu_bn, Rng& rng)
      : kind(k), geometry(g), bias(Tensor<T>({cout}), true), relu_bn(with_relu_bn) {
    const double k2 = static_cast<double>(g.kernel_h * g.kernel_w);
    if (k == ConvKind::kConv) {
      weight = Var<T>(uniform_init<T>(rng, {cout, cin, g.kernel_h, g.kernel_w}, cin * k2), true);
    } else {
      // Each output of a strided transpose conv sees about Cin * k^2 / stride^2 inputs.
      const double s2 = static_cast<double>(g.stride * g.stride);
      weight = Var<T>(uniform_init<T>(rng, {cin, cout, g.kernel_h, g.kernel_w}, cin * k2 / s2), true);
    }
    if (relu_bn) {
      gamma = Var<T>(Tensor<T>({cout}, T(1)), true);
      beta = Var<T>(Tensor<T>({cout}), true);
      running_mean = Tensor<T>({cout});
      running_var = Tensor<T>({cout}, T(1));
    }
  }

  std::size_t in_channels() const { return kind == ConvKind::kConv ? weight.shape()[1] : weight.shape()[0]; }
  std::size_t out_channels() const { return kind == ConvKind::kConv ? weight.shape()[0] : weight.shape()[1]; }

  Var<T> forward(const Var<T>& x, Mode mode) {
    auto y = kind == ConvKind::kConv ? tensor::conv2d(x, weight, bias, geometry)
                                     : tensor::conv_transpose2d(x, weight, bias, geometry);
    if (!relu_bn) return y;
    return tensor::batchnorm2d(tensor::relu(y), gamma, beta, running_mean, running_var, mode);
  }

  // Eval-mode forward without graph recording; safe to call concurrently.
  Tensor<T> infer(const Tensor<T>& x) const {
    auto y = kind == ConvKind::kConv ? tensor::conv2d_forward(x, weight.value(), &bias.value(), geometry)
                                     : tensor::conv_transpose2d_forward(x, weight.value(), &bias.value(), geometry);
    if (!relu_bn) return y;
    return tensor::batchnorm2d_eval_forward(tensor::relu_forward(y), gamma.value(), beta.value(), running_mean,
                                            running_var, tensor::BatchNormOptions{});
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
    if (relu_bn) {
      fn(prefix + ".bn.gamma", gamma);
      fn(prefix + ".bn.beta", beta);
    }
  }

  void visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) {
    if (!relu_bn) return;
    fn(prefix + ".bn.running_mean", running_mean);
    fn(prefix + ".bn.running_var", running_var);
  }
};

}  // namespace ussim::models
