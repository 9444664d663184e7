#pragma once

#include <cstddef>
#include <span>

#include "dip/autograd.hpp"

namespace dip {

enum class PadMode { Zero, Reflect };

// Explicit per-side padding applied before a convolution.
struct Padding {
  PadMode mode = PadMode::Reflect;
  std::size_t top = 0, bottom = 0, left = 0, right = 0;

  static Padding valid() { return {PadMode::Zero, 0, 0, 0, 0}; }
  // Output extent equals input extent at stride 1 for odd kernels.
  static Padding same(std::size_t kernel, PadMode mode = PadMode::Reflect) {
    const std::size_t p = kernel / 2;
    return {mode, p, p, p, p};
  }
};

struct ConvOptions {
  std::size_t stride = 1;
  Padding padding = Padding::valid();
};

// input (N, C, H, W), kernel (F, C, kH, kW), bias (F) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, const ConvOptions& options);

// Output is (N, C, 2H, 2W). Half-pixel centers: output pixel i samples input
// coordinate (i + 0.5) / 2 - 0.5, clamped to the valid range.
template <typename T>
Var<T> bilinear_upsample2x(const Var<T>& input);

// 2x2 mean pooling; H and W must be even.
template <typename T>
Var<T> avg_pool2x(const Var<T>& input);

// Slope at exactly zero is alpha.
template <typename T>
Var<T> leaky_relu(const Var<T>& input, double alpha);

template <typename T>
Var<T> sigmoid(const Var<T>& input);

// Per (batch, channel) plane: subtract the spatial mean and divide by the
// spatial standard deviation (biased, plus eps). No learned parameters.
template <typename T>
Var<T> instance_norm(const Var<T>& input, double eps = 1e-5);

// Elementwise product. `b` may match `a` exactly or be (1, 1, H, W) against a
// 4-axis `a`, in which case it broadcasts over batch and channel.
template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> inputs);

template <typename T>
Var<T> crop2d(const Var<T>& input, std::size_t top, std::size_t left, std::size_t height, std::size_t width);

template <typename T>
Var<T> sum(const Var<T>& input);

// Mean of squared differences over all elements.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target);

// Materialized padding, as used internally by conv2d. Exposed for tests.
template <typename T>
Tensor<T> pad2d(const Tensor<T>& input, const Padding& padding);

}  // namespace dip
