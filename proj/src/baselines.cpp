#include "dip/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dip {

InterpMethod InterpMethod::parse(const std::string& name) {
  if (name == "bilinear") return bilinear();
  if (name == "bicubic") return bicubic();
  if (name == "lanczos") return lanczos();
  throw std::invalid_argument("unknown interpolation method '" + name + "' (expected bilinear|bicubic|lanczos)");
}

std::string InterpMethod::name() const {
  switch (kind) {
    case InterpKind::Bilinear:
      return "bilinear";
    case InterpKind::Bicubic:
      return "bicubic";
    case InterpKind::Lanczos:
      return "lanczos";
  }
  return "unknown";
}

int InterpMethod::radius() const {
  switch (kind) {
    case InterpKind::Bilinear:
      return 1;
    case InterpKind::Bicubic:
      return 2;
    case InterpKind::Lanczos:
      return lanczos_a;
  }
  return 1;
}

namespace {

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

double kernel_value(const InterpMethod& m, double t) {
  const double a = std::abs(t);
  if (a == 0.0) return 1.0;
  if (a == std::floor(a)) return 0.0;  // sin(pi * n) is not exactly zero in floating point
  switch (m.kind) {
    case InterpKind::Bilinear:
      return a < 1.0 ? 1.0 - a : 0.0;
    case InterpKind::Bicubic: {
      const double c = m.bicubic_a;
      if (a < 1.0) return ((c + 2.0) * a - (c + 3.0)) * a * a + 1.0;
      if (a < 2.0) return ((c * a - 5.0 * c) * a + 8.0 * c) * a - 4.0 * c;
      return 0.0;
    }
    case InterpKind::Lanczos: {
      const double r = static_cast<double>(m.lanczos_a);
      return a < r ? sinc(a) * sinc(a / r) : 0.0;
    }
  }
  return 0.0;
}

std::vector<AxisTaps> axis_taps(std::size_t target, std::size_t n, std::size_t step, std::size_t offset,
                                const InterpMethod& method) {
  if (n == 0 || step == 0) throw std::invalid_argument("axis_taps: empty source grid");
  if (method.kind == InterpKind::Lanczos && method.lanczos_a < 1) throw std::invalid_argument("lanczos a must be >= 1");
  const long r = method.radius();
  const long last = static_cast<long>(n) - 1;
  std::vector<AxisTaps> taps(target);
  for (std::size_t x = 0; x < target; ++x) {
    const double u = (static_cast<double>(x) - static_cast<double>(offset)) / static_cast<double>(step);
    const long base = static_cast<long>(std::floor(u));
    AxisTaps& t = taps[x];
    double total = 0.0;
    for (long j = base - r + 1; j <= base + r; ++j) {
      const double w = kernel_value(method, u - static_cast<double>(j));
      if (w == 0.0) continue;
      const auto idx = static_cast<std::size_t>(std::clamp(j, 0L, last));
      if (!t.index.empty() && t.index.back() == idx) {
        t.weight.back() += w;
      } else {
        t.index.push_back(idx);
        t.weight.push_back(w);
      }
      total += w;
    }
    if (method.kind == InterpKind::Lanczos) {
      for (auto& w : t.weight) w /= total;
    }
  }
  return taps;
}

template <typename T>
Tensor<T> interpolate(const Tensor<T>& lowres, const SamplingPattern& p, std::size_t height, std::size_t width,
                      const InterpMethod& method) {
  p.validate();
  const auto& s = lowres.shape();
  const std::size_t lh = sampled_extent(height, p.sy, p.offset_y), lw = sampled_extent(width, p.sx, p.offset_x);
  if (s.size() != 4 || s[2] != lh || s[3] != lw || lh == 0 || lw == 0) {
    throw std::invalid_argument("interpolate: low-resolution grid " + shape_to_string(s) +
                                " is inconsistent with pattern " + p.label() + " on " + std::to_string(height) + "x" +
                                std::to_string(width) + " (expected " + std::to_string(lh) + "x" +
                                std::to_string(lw) + ")");
  }
  const auto col_taps = axis_taps(width, lw, p.sx, p.offset_x, method);
  const auto row_taps = axis_taps(height, lh, p.sy, p.offset_y, method);
  Tensor<T> out({s[0], s[1], height, width});
  std::vector<double> wide(lh * width);
  for (std::size_t plane = 0; plane < s[0] * s[1]; ++plane) {
    const T* src = lowres.raw() + plane * lh * lw;
    for (std::size_t i = 0; i < lh; ++i)
      for (std::size_t x = 0; x < width; ++x) {
        const auto& t = col_taps[x];
        double acc = 0.0;
        for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * static_cast<double>(src[i * lw + t.index[k]]);
        wide[i * width + x] = acc;
      }
    T* dst = out.raw() + plane * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      const auto& t = row_taps[y];
      for (std::size_t x = 0; x < width; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * wide[t.index[k] * width + x];
        dst[y * width + x] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

template Tensor<float> interpolate(const Tensor<float>&, const SamplingPattern&, std::size_t, std::size_t,
                                   const InterpMethod&);
template Tensor<double> interpolate(const Tensor<double>&, const SamplingPattern&, std::size_t, std::size_t,
                                    const InterpMethod&);

}  // namespace dip
