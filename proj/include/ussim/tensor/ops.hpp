#pragma once

// Recorded operations: each runs its forward kernel and, when recording, attaches the
// matching backward kernel to the result node.

#include <memory>

#include "ussim/tensor/autograd.hpp"
#include "ussim/tensor/kernels.hpp"

namespace ussim::tensor {

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return make_result<T>(linear_forward(x.value(), w.value(), b.value()), {x, w, b}, [](Node<T>& self) {
    auto& xi = *self.inputs[0];
    auto& wi = *self.inputs[1];
    auto& bi = *self.inputs[2];
    linear_backward(self.grad, xi.value, wi.value, xi.requires_grad ? &xi.grad_buffer() : nullptr,
                    wi.requires_grad ? &wi.grad_buffer() : nullptr, bi.requires_grad ? &bi.grad_buffer() : nullptr);
  });
}

// `bias` may be empty (no bias term).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ConvGeometry& g) {
  const bool has_bias = static_cast<bool>(bias);
  auto y = conv2d_forward(x.value(), w.value(), has_bias ? &bias.value() : nullptr, g);
  auto fn = [g, has_bias](Node<T>& self) {
    auto& xi = *self.inputs[0];
    auto& wi = *self.inputs[1];
    Tensor<T>* gb = nullptr;
    if (has_bias && self.inputs[2]->requires_grad) gb = &self.inputs[2]->grad_buffer();
    conv2d_backward(self.grad, xi.value, wi.value, g, xi.requires_grad ? &xi.grad_buffer() : nullptr,
                    wi.requires_grad ? &wi.grad_buffer() : nullptr, gb);
  };
  if (has_bias) return make_result<T>(std::move(y), {x, w, bias}, fn);
  return make_result<T>(std::move(y), {x, w}, fn);
}

template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, const ConvGeometry& g) {
  const bool has_bias = static_cast<bool>(bias);
  auto y = conv_transpose2d_forward(x.value(), w.value(), has_bias ? &bias.value() : nullptr, g);
  auto fn = [g, has_bias](Node<T>& self) {
    auto& xi = *self.inputs[0];
    auto& wi = *self.inputs[1];
    Tensor<T>* gb = nullptr;
    if (has_bias && self.inputs[2]->requires_grad) gb = &self.inputs[2]->grad_buffer();
    conv_transpose2d_backward(self.grad, xi.value, wi.value, g, xi.requires_grad ? &xi.grad_buffer() : nullptr,
                              wi.requires_grad ? &wi.grad_buffer() : nullptr, gb);
  };
  if (has_bias) return make_result<T>(std::move(y), {x, w, bias}, fn);
  return make_result<T>(std::move(y), {x, w}, fn);
}

enum class Mode { kTrain, kEval };

// Training mode updates the running statistics in place.
template <class T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                   Tensor<T>& running_var, Mode mode, const BatchNormOptions& opt = {}) {
  if (mode == Mode::kEval) {
    auto y = batchnorm2d_eval_forward(x.value(), gamma.value(), beta.value(), running_mean, running_var, opt);
    // Eval-mode backward: an affine map per channel.
    auto scale = std::make_shared<std::vector<T>>(running_mean.size());
    for (std::size_t c = 0; c < scale->size(); ++c)
      (*scale)[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + opt.eps));
    auto mean = running_mean;
    return make_result<T>(std::move(y), {x, gamma, beta}, [scale, mean](Node<T>& self) {
      auto& xi = *self.inputs[0];
      auto& gi = *self.inputs[1];
      auto& bi = *self.inputs[2];
      const auto& s = xi.value.shape();
      const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
      for (std::size_t c = 0; c < C; ++c) {
        double sg = 0, sgh = 0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < HW; ++i) {
            const std::size_t k = (b * C + c) * HW + i;
            const T g = self.grad[k];
            sg += g;
            sgh += static_cast<double>(g) * (xi.value[k] - mean[c]) * (*scale)[c];
            if (xi.requires_grad) xi.grad_buffer()[k] += g * gi.value[c] * (*scale)[c];
          }
        if (gi.requires_grad) gi.grad_buffer()[c] += static_cast<T>(sgh);
        if (bi.requires_grad) bi.grad_buffer()[c] += static_cast<T>(sg);
      }
    });
  }
  auto cache = std::make_shared<BatchNormCache<T>>();
  auto y = batchnorm2d_train_forward(x.value(), gamma.value(), beta.value(), running_mean, running_var, opt,
                                     grad_enabled() ? cache.get() : nullptr);
  return make_result<T>(std::move(y), {x, gamma, beta}, [cache](Node<T>& self) {
    auto& xi = *self.inputs[0];
    auto& gi = *self.inputs[1];
    auto& bi = *self.inputs[2];
    batchnorm2d_train_backward(self.grad, gi.value, *cache, xi.requires_grad ? &xi.grad_buffer() : nullptr,
                               gi.requires_grad ? &gi.grad_buffer() : nullptr,
                               bi.requires_grad ? &bi.grad_buffer() : nullptr);
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return make_result<T>(relu_forward(x.value()), {x}, [](Node<T>& self) {
    auto& xi = *self.inputs[0];
    relu_backward(self.grad, self.value, xi.grad_buffer());
  });
}

// Scalar mean of squared differences.
template <class T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  const double v = mse_value(a.value(), b.value());
  if (!std::isfinite(v)) throw NumericError("mse_loss: non-finite loss");
  return make_result<T>(Tensor<T>({1}, static_cast<T>(v)), {a, b}, [](Node<T>& self) {
    auto& ai = *self.inputs[0];
    auto& bi = *self.inputs[1];
    const double k = 2.0 * static_cast<double>(self.grad[0]) / static_cast<double>(ai.value.size());
    for (std::size_t i = 0; i < ai.value.size(); ++i) {
      const T d = static_cast<T>(k * (static_cast<double>(ai.value[i]) - static_cast<double>(bi.value[i])));
      if (ai.requires_grad) ai.grad_buffer()[i] += d;
      if (bi.requires_grad) bi.grad_buffer()[i] -= d;
    }
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  return make_result<T>(x.value().reshaped(std::move(shape)), {x}, [](Node<T>& self) {
    auto& xi = *self.inputs[0];
    auto& g = xi.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_result<T>(std::move(y), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T k) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v *= k;
  return make_result<T>(std::move(y), {x}, [k](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * self.grad[i];
  });
}

}  // namespace ussim::tensor
