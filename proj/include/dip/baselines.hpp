#pragma once

#include <string>
#include <vector>

#include "dip/sampling.hpp"
#include "dip/tensor.hpp"

namespace dip {

enum class InterpKind { Bilinear, Bicubic, Lanczos };

struct InterpMethod {
  InterpKind kind = InterpKind::Bicubic;
  double bicubic_a = -0.5;  // Keys parameter; -0.5 is Catmull-Rom
  int lanczos_a = 4;        // support radius, 2a taps

  static InterpMethod bilinear() { return {InterpKind::Bilinear, -0.5, 4}; }
  static InterpMethod bicubic(double a = -0.5) { return {InterpKind::Bicubic, a, 4}; }
  static InterpMethod lanczos(int a = 4) { return {InterpKind::Lanczos, -0.5, a}; }
  // "bilinear", "bicubic" or "lanczos".
  static InterpMethod parse(const std::string& name);

  std::string name() const;
  // Kernel radius in source samples.
  int radius() const;
};

double kernel_value(const InterpMethod& method, double t);

// Source indices and weights contributing to one output position.
struct AxisTaps {
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

// Taps for every output index along an axis of extent target when the n
// source samples sit at offset + i * step. Source indices are clamped to the
// grid; lanczos weights are renormalized to sum to one.
std::vector<AxisTaps> axis_taps(std::size_t target, std::size_t n, std::size_t step, std::size_t offset,
                                const InterpMethod& method);

// Separable resampling of an extract_lowres grid back to height x width.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& lowres, const SamplingPattern& pattern, std::size_t height, std::size_t width,
                      const InterpMethod& method);

}  // namespace dip
