#include "dip/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace dip {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Keeps an im2col chunk at or below this many elements.
constexpr std::size_t kColBudget = std::size_t{1} << 16;

void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) {
    throw std::invalid_argument(std::string(what) + ": expected (N, C, H, W) input, got " + shape_to_string(s));
  }
}

// Source index for a padded coordinate, or -1 for a zero pad cell.
std::ptrdiff_t padded_source(std::ptrdiff_t p, std::size_t before, std::size_t extent, PadMode mode) {
  std::ptrdiff_t i = p - static_cast<std::ptrdiff_t>(before);
  const auto n = static_cast<std::ptrdiff_t>(extent);
  if (i >= 0 && i < n) return i;
  if (mode == PadMode::Zero) return -1;
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<std::ptrdiff_t> pad_map(std::size_t before, std::size_t after, std::size_t extent, PadMode mode) {
  std::vector<std::ptrdiff_t> map(before + extent + after);
  for (std::size_t p = 0; p < map.size(); ++p) map[p] = padded_source(static_cast<std::ptrdiff_t>(p), before, extent, mode);
  return map;
}

template <typename F>
void parallel_chunks(std::size_t count, F&& fn) {
  const Runtime& rt = Runtime::get();
  const std::size_t workers = rt.deterministic ? 1 : std::min(rt.intra_op_threads, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct ConvGeometry {
  std::size_t n, c, h, w;      // input
  std::size_t f, kh, kw;       // kernel
  std::size_t hp, wp;          // padded input
  std::size_t ho, wo;          // output
  std::size_t stride;
  std::size_t k() const { return c * kh * kw; }
  std::size_t rows_per_chunk() const { return std::max<std::size_t>(1, kColBudget / std::max<std::size_t>(1, k() * wo)); }
  std::size_t chunk_count() const { return (ho + rows_per_chunk() - 1) / rows_per_chunk(); }
};

// Fills col (K x rows*wo) from padded single-image input for output rows [r0, r1).
template <typename T>
void im2col(const T* padded, const ConvGeometry& g, std::size_t r0, std::size_t r1, T* col) {
  const std::size_t cols = (r1 - r0) * g.wo;
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* dst = col + ((ch * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oh = r0; oh < r1; ++oh) {
          const T* src = padded + (ch * g.hp + oh * g.stride + i) * g.wp + j;
          if (g.stride == 1) {
            std::copy(src, src + g.wo, dst);
          } else {
            for (std::size_t ow = 0; ow < g.wo; ++ow) dst[ow] = src[ow * g.stride];
          }
          dst += g.wo;
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::size_t r0, std::size_t r1, T* padded_grad) {
  const std::size_t cols = (r1 - r0) * g.wo;
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* src = col + ((ch * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oh = r0; oh < r1; ++oh) {
          T* dst = padded_grad + (ch * g.hp + oh * g.stride + i) * g.wp + j;
          for (std::size_t ow = 0; ow < g.wo; ++ow) dst[ow * g.stride] += src[ow];
          src += g.wo;
        }
      }
    }
  }
}

// Folds a padded-layout gradient back onto the unpadded input gradient.
template <typename T>
void unpad_add(const T* padded_grad, const Padding& pad, std::size_t c, std::size_t h, std::size_t w, T* grad) {
  const auto rows = pad_map(pad.top, pad.bottom, h, pad.mode);
  const auto cols = pad_map(pad.left, pad.right, w, pad.mode);
  const std::size_t hp = rows.size(), wp = cols.size();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < hp; ++y) {
      if (rows[y] < 0) continue;
      const T* src = padded_grad + (ch * hp + y) * wp;
      T* dst = grad + (ch * h + static_cast<std::size_t>(rows[y])) * w;
      for (std::size_t x = 0; x < wp; ++x) {
        if (cols[x] >= 0) dst[cols[x]] += src[x];
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> pad2d(const Tensor<T>& input, const Padding& padding) {
  require_rank4(input.shape(), "pad2d");
  const auto& s = input.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const auto rows = pad_map(padding.top, padding.bottom, h, padding.mode);
  const auto cols = pad_map(padding.left, padding.right, w, padding.mode);
  Tensor<T> out({n, c, rows.size(), cols.size()});
  T* dst = out.raw();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = input.raw() + plane * h * w;
    for (std::size_t y = 0; y < rows.size(); ++y) {
      for (std::size_t x = 0; x < cols.size(); ++x) {
        *dst++ = (rows[y] < 0 || cols[x] < 0) ? T(0) : src[rows[y] * static_cast<std::ptrdiff_t>(w) + cols[x]];
      }
    }
  }
  return out;
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, const ConvOptions& options) {
  require_rank4(input.shape(), "conv2d");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks.size() != 4) throw std::invalid_argument("conv2d: kernel must be (out_ch, in_ch, kH, kW), got " + shape_to_string(ks));
  if (ks[1] != is[1]) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(is[1]) + " channels but kernel expects " +
                                std::to_string(ks[1]) + " (input " + shape_to_string(is) + ", kernel " +
                                shape_to_string(ks) + ")");
  }
  if (options.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != ks[0])) {
    throw std::invalid_argument("conv2d: bias must have shape (" + std::to_string(ks[0]) + "), got " +
                                shape_to_string(bias.shape()));
  }
  const Padding& pad = options.padding;
  ConvGeometry g{};
  g.n = is[0]; g.c = is[1]; g.h = is[2]; g.w = is[3];
  g.f = ks[0]; g.kh = ks[2]; g.kw = ks[3];
  g.hp = g.h + pad.top + pad.bottom;
  g.wp = g.w + pad.left + pad.right;
  g.stride = options.stride;
  if (g.hp < g.kh || g.wp < g.kw) {
    throw std::invalid_argument("conv2d: kernel " + shape_to_string(ks) + " larger than padded input " +
                                std::to_string(g.hp) + "x" + std::to_string(g.wp) + " (zero-size output)");
  }
  g.ho = (g.hp - g.kh) / g.stride + 1;
  g.wo = (g.wp - g.kw) / g.stride + 1;

  const Tensor<T> padded = pad2d(input.value(), pad);
  Tensor<T> out({g.n, g.f, g.ho, g.wo});
  const std::size_t k = g.k();
  const std::size_t plane_out = g.ho * g.wo;
  Eigen::Map<const MatR<T>> wmat(kernel.value().raw(), static_cast<Eigen::Index>(g.f), static_cast<Eigen::Index>(k));

  for (std::size_t b = 0; b < g.n; ++b) {
    const T* pin = padded.raw() + b * g.c * g.hp * g.wp;
    T* pout = out.raw() + b * g.f * plane_out;
    const std::size_t rpc = g.rows_per_chunk();
    parallel_chunks(g.chunk_count(), [&](std::size_t chunk) {
      const std::size_t r0 = chunk * rpc, r1 = std::min(g.ho, r0 + rpc);
      const std::size_t cols = (r1 - r0) * g.wo;
      std::vector<T> col(k * cols);
      im2col(pin, g, r0, r1, col.data());
      Eigen::Map<const MatR<T>> cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cols));
      Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>> y(pout + r0 * g.wo, static_cast<Eigen::Index>(g.f),
                                                     static_cast<Eigen::Index>(cols),
                                                     Eigen::OuterStride<>(static_cast<Eigen::Index>(plane_out)));
      y.noalias() = wmat * cm;
    });
    if (bias.defined()) {
      for (std::size_t f = 0; f < g.f; ++f) {
        const T bv = bias.value()[f];
        T* p = pout + f * plane_out;
        for (std::size_t i = 0; i < plane_out; ++i) p[i] += bv;
      }
    }
  }

  std::vector<Var<T>> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result<T>("conv2d", std::move(out), std::move(inputs), [g, pad, has_bias](Node<T>& self) {
    auto& in_node = *self.inputs[0];
    auto& k_node = *self.inputs[1];
    const Tensor<T>& dy = self.grad;
    const std::size_t k = g.k();
    const std::size_t plane_out = g.ho * g.wo;
    const Tensor<T> padded = pad2d(in_node.value, pad);
    Eigen::Map<const MatR<T>> wmat(k_node.value.raw(), static_cast<Eigen::Index>(g.f), static_cast<Eigen::Index>(k));

    if (has_bias && self.inputs[2]->requires_grad) {
      Tensor<T>& db = self.inputs[2]->grad_buffer();
      for (std::size_t b = 0; b < g.n; ++b) {
        for (std::size_t f = 0; f < g.f; ++f) {
          const T* p = dy.raw() + (b * g.f + f) * plane_out;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane_out; ++i) acc += p[i];
          db[f] += static_cast<T>(acc);
        }
      }
    }
    const bool need_w = k_node.requires_grad;
    const bool need_x = in_node.requires_grad;
    if (!need_w && !need_x) return;

    MatR<T> dw;
    if (need_w) dw = MatR<T>::Zero(static_cast<Eigen::Index>(g.f), static_cast<Eigen::Index>(k));
    std::vector<T> dpad;
    if (need_x) dpad.assign(g.c * g.hp * g.wp, T(0));
    Tensor<T>* dx = need_x ? &in_node.grad_buffer() : nullptr;

    const std::size_t rpc = g.rows_per_chunk();
    std::vector<T> col, dcol;
    for (std::size_t b = 0; b < g.n; ++b) {
      const T* pin = padded.raw() + b * g.c * g.hp * g.wp;
      const T* pdy = dy.raw() + b * g.f * plane_out;
      if (need_x) std::fill(dpad.begin(), dpad.end(), T(0));
      for (std::size_t chunk = 0; chunk < g.chunk_count(); ++chunk) {
        const std::size_t r0 = chunk * rpc, r1 = std::min(g.ho, r0 + rpc);
        const auto cols = static_cast<Eigen::Index>((r1 - r0) * g.wo);
        Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>> dyc(
            pdy + r0 * g.wo, static_cast<Eigen::Index>(g.f), cols,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(plane_out)));
        if (need_w) {
          col.resize(k * static_cast<std::size_t>(cols));
          im2col(pin, g, r0, r1, col.data());
          Eigen::Map<const MatR<T>> cm(col.data(), static_cast<Eigen::Index>(k), cols);
          dw.noalias() += dyc * cm.transpose();
        }
        if (need_x) {
          dcol.resize(k * static_cast<std::size_t>(cols));
          Eigen::Map<MatR<T>> dcm(dcol.data(), static_cast<Eigen::Index>(k), cols);
          dcm.noalias() = wmat.transpose() * dyc;
          col2im_add(dcol.data(), g, r0, r1, dpad.data());
        }
      }
      if (need_x) unpad_add(dpad.data(), pad, g.c, g.h, g.w, dx->raw() + b * g.c * g.h * g.w);
    }
    if (need_w) {
      Tensor<T>& gw = k_node.grad_buffer();
      for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw.data()[i];
    }
  });
}

namespace {

// Two-tap linear weights per output index for half-pixel 2x upsampling.
struct UpTaps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

UpTaps upsample_taps(std::size_t n) {
  UpTaps t;
  const std::size_t m = 2 * n;
  t.i0.resize(m); t.i1.resize(m); t.w1.resize(m);
  for (std::size_t o = 0; o < m; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.i0[o] = lo;
    t.i1[o] = std::min(lo + 1, n - 1);
    t.w1[o] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> bilinear_upsample2x(const Var<T>& input) {
  require_rank4(input.shape(), "bilinear_upsample2x");
  const auto& s = input.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  const UpTaps ty = upsample_taps(h), tx = upsample_taps(w);
  Tensor<T> out({s[0], s[1], 2 * h, 2 * w});
  // Horizontal pass per source row, then blend two rows vertically.
  std::vector<T> horiz(h * 2 * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = input.value().raw() + p * h * w;
    T* dst = out.raw() + p * 4 * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) {
        const T a = src[y * w + tx.i0[x]], b = src[y * w + tx.i1[x]];
        horiz[y * 2 * w + x] = static_cast<T>(a + tx.w1[x] * (b - a));
      }
    }
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const T* r0 = horiz.data() + ty.i0[y] * 2 * w;
      const T* r1 = horiz.data() + ty.i1[y] * 2 * w;
      const double wy = ty.w1[y];
      for (std::size_t x = 0; x < 2 * w; ++x) dst[y * 2 * w + x] = static_cast<T>(r0[x] + wy * (r1[x] - r0[x]));
    }
  }
  return make_result<T>("bilinear_upsample2x", std::move(out), {input}, [planes, h, w, ty, tx](Node<T>& self) {
    Tensor<T>& gin = self.inputs[0]->grad_buffer();
    const Tensor<T>& gout = self.grad;
    std::vector<T> horiz(h * 2 * w);
    for (std::size_t p = 0; p < planes; ++p) {
      const T* g = gout.raw() + p * 4 * h * w;
      T* dst = gin.raw() + p * h * w;
      std::fill(horiz.begin(), horiz.end(), T(0));
      for (std::size_t y = 0; y < 2 * h; ++y) {
        const double wy = ty.w1[y];
        T* r0 = horiz.data() + ty.i0[y] * 2 * w;
        T* r1 = horiz.data() + ty.i1[y] * 2 * w;
        for (std::size_t x = 0; x < 2 * w; ++x) {
          const T v = g[y * 2 * w + x];
          r0[x] += static_cast<T>((1.0 - wy) * v);
          r1[x] += static_cast<T>(wy * v);
        }
      }
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < 2 * w; ++x) {
          const T v = horiz[y * 2 * w + x];
          dst[y * w + tx.i0[x]] += static_cast<T>((1.0 - tx.w1[x]) * v);
          dst[y * w + tx.i1[x]] += static_cast<T>(tx.w1[x] * v);
        }
      }
    }
  });
}

template <typename T>
Var<T> avg_pool2x(const Var<T>& input) {
  require_rank4(input.shape(), "avg_pool2x");
  const auto& s = input.shape();
  if (s[2] % 2 || s[3] % 2) throw std::invalid_argument("avg_pool2x: spatial extents must be even, got " + shape_to_string(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], ho = h / 2, wo = w / 2;
  Tensor<T> out({s[0], s[1], ho, wo});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = input.value().raw() + p * h * w;
    T* dst = out.raw() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t x = 0; x < wo; ++x)
        dst[y * wo + x] = T(0.25) * (src[2 * y * w + 2 * x] + src[2 * y * w + 2 * x + 1] +
                                     src[(2 * y + 1) * w + 2 * x] + src[(2 * y + 1) * w + 2 * x + 1]);
  }
  return make_result<T>("avg_pool2x", std::move(out), {input}, [planes, h, w, ho, wo](Node<T>& self) {
    Tensor<T>& gin = self.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* g = self.grad.raw() + p * ho * wo;
      T* dst = gin.raw() + p * h * w;
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          const T v = T(0.25) * g[y * wo + x];
          dst[2 * y * w + 2 * x] += v;
          dst[2 * y * w + 2 * x + 1] += v;
          dst[(2 * y + 1) * w + 2 * x] += v;
          dst[(2 * y + 1) * w + 2 * x + 1] += v;
        }
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& input, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("leaky_relu: alpha must be in [0, 1)");
  const T a = static_cast<T>(alpha);
  Tensor<T> out = input.value();
  for (auto& v : out.data()) v = v > T(0) ? v : a * v;
  return make_result<T>("leaky_relu", std::move(out), {input}, [a](Node<T>& self) {
    auto& in = *self.inputs[0];
    Tensor<T>& gin = in.grad_buffer();
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += in.value[i] > T(0) ? self.grad[i] : a * self.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& input) {
  Tensor<T> out = input.value();
  for (auto& v : out.data()) {
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  return make_result<T>("sigmoid", std::move(out), {input}, [](Node<T>& self) {
    Tensor<T>& gin = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gin.size(); ++i) {
      const T y = self.value[i];
      gin[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& input, double eps) {
  const auto& s = input.shape();
  if (s.size() != 4) throw std::invalid_argument("instance_norm: input must be 4-D, got " + shape_to_string(s));
  if (!(eps > 0.0)) throw std::invalid_argument("instance_norm: eps must be positive");
  const std::size_t plane = s[2] * s[3], planes = s[0] * s[1];
  Tensor<T> out(s);
  std::vector<double> inv_sd(planes);
  const T* x = input.value().raw();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = x + p * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += static_cast<double>(xp[i]);
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = static_cast<double>(xp[i]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(plane);
    inv_sd[p] = 1.0 / std::sqrt(var + eps);
    T* yp = out.raw() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) yp[i] = static_cast<T>((static_cast<double>(xp[i]) - mean) * inv_sd[p]);
  }
  return make_result<T>("instance_norm", std::move(out), {input},
                        [plane, planes, inv_sd = std::move(inv_sd)](Node<T>& self) {
                          Tensor<T>& gin = self.inputs[0]->grad_buffer();
                          for (std::size_t p = 0; p < planes; ++p) {
                            const T* g = self.grad.raw() + p * plane;
                            const T* y = self.value.raw() + p * plane;
                            double mg = 0.0, mgy = 0.0;
                            for (std::size_t i = 0; i < plane; ++i) {
                              mg += static_cast<double>(g[i]);
                              mgy += static_cast<double>(g[i]) * static_cast<double>(y[i]);
                            }
                            mg /= static_cast<double>(plane);
                            mgy /= static_cast<double>(plane);
                            T* gi = gin.raw() + p * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                              gi[i] += static_cast<T>(
                                  inv_sd[p] * (static_cast<double>(g[i]) - mg - static_cast<double>(y[i]) * mgy));
                            }
                          }
                        });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool exact = sa == sb;
  const bool broadcast = !exact && sa.size() == 4 && sb.size() == 4 && sb[0] == 1 && sb[1] == 1 &&
                         sb[2] == sa[2] && sb[3] == sa[3];
  if (!exact && !broadcast) {
    throw std::invalid_argument("hadamard: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  }
  const std::size_t plane = exact ? a.value().size() : sa[2] * sa[3];
  const std::size_t planes = a.value().size() / plane;
  Tensor<T> out = a.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < plane; ++i) out[p * plane + i] *= b.value()[i];
  return make_result<T>("hadamard", std::move(out), {a, b}, [plane, planes](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      Tensor<T>& ga = na.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < plane; ++i) ga[p * plane + i] += self.grad[p * plane + i] * nb.value[i];
    }
    if (nb.requires_grad) {
      Tensor<T>& gb = nb.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < plane; ++i) gb[i] += self.grad[p * plane + i] * na.value[p * plane + i];
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->accumulate_grad(self.grad);
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape& first = inputs[0].shape();
  require_rank4(first, "concat_channels");
  std::size_t channels = 0;
  for (const auto& in : inputs) {
    const Shape& s = in.shape();
    require_rank4(s, "concat_channels");
    if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw std::invalid_argument("concat_channels: batch/spatial mismatch " + shape_to_string(first) + " vs " +
                                  shape_to_string(s));
    }
    channels += s[1];
  }
  const std::size_t n = first[0], plane = first[2] * first[3];
  Tensor<T> out({n, channels, first[2], first[3]});
  std::vector<std::size_t> counts;
  for (std::size_t b = 0; b < n; ++b) {
    T* dst = out.raw() + b * channels * plane;
    for (const auto& in : inputs) {
      const std::size_t len = in.shape()[1] * plane;
      const T* src = in.value().raw() + b * len;
      dst = std::copy(src, src + len, dst);
    }
  }
  for (const auto& in : inputs) counts.push_back(in.shape()[1]);
  std::vector<Var<T>> ins(inputs.begin(), inputs.end());
  return make_result<T>("concat_channels", std::move(out), std::move(ins), [n, channels, plane, counts](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = *self.inputs[k];
      const std::size_t len = counts[k] * plane;
      if (in.requires_grad) {
        Tensor<T>& g = in.grad_buffer();
        for (std::size_t b = 0; b < n; ++b) {
          const T* src = self.grad.raw() + b * channels * plane + offset;
          T* dst = g.raw() + b * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
      offset += len;
    }
  });
}

template <typename T>
Var<T> crop2d(const Var<T>& input, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  require_rank4(input.shape(), "crop2d");
  const auto& s = input.shape();
  if (height == 0 || width == 0 || top + height > s[2] || left + width > s[3]) {
    throw std::invalid_argument("crop2d: window out of range for " + shape_to_string(s));
  }
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor<T> out({s[0], s[1], height, width});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < height; ++y) {
      const T* src = input.value().raw() + (p * h + top + y) * w + left;
      std::copy(src, src + width, out.raw() + (p * height + y) * width);
    }
  return make_result<T>("crop2d", std::move(out), {input}, [=](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < height; ++y) {
        const T* src = self.grad.raw() + (p * height + y) * width;
        T* dst = g.raw() + (p * h + top + y) * w + left;
        for (std::size_t x = 0; x < width; ++x) dst[x] += src[x];
      }
  });
}

template <typename T>
Var<T> sum(const Var<T>& input) {
  double acc = 0.0;
  for (T v : input.value().data()) acc += v;
  return make_result<T>("sum", Tensor<T>({1}, static_cast<T>(acc)), {input}, [](Node<T>& self) {
    Tensor<T>& g = self.inputs[0]->grad_buffer();
    const T s = self.grad[0];
    for (auto& v : g.data()) v += s;
  });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("mse_loss: shape mismatch " + shape_to_string(pred.shape()) + " vs " +
                                shape_to_string(target.shape()));
  }
  const std::size_t count = pred.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(pred.value()[i]) - static_cast<double>(target.value()[i]);
    acc += d * d;
  }
  return make_result<T>("mse_loss", Tensor<T>({1}, static_cast<T>(acc / static_cast<double>(count))), {pred, target},
                        [count](Node<T>& self) {
                          auto& p = *self.inputs[0];
                          auto& t = *self.inputs[1];
                          const T scale = static_cast<T>(2.0 / static_cast<double>(count)) * self.grad[0];
                          if (p.requires_grad) {
                            Tensor<T>& g = p.grad_buffer();
                            for (std::size_t i = 0; i < count; ++i) g[i] += scale * (p.value[i] - t.value[i]);
                          }
                          if (t.requires_grad) {
                            Tensor<T>& g = t.grad_buffer();
                            for (std::size_t i = 0; i < count; ++i) g[i] -= scale * (p.value[i] - t.value[i]);
                          }
                        });
}

#define DIP_INSTANTIATE(T)                                                                                   \
  template Tensor<T> pad2d<T>(const Tensor<T>&, const Padding&);                                             \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const ConvOptions&);                \
  template Var<T> bilinear_upsample2x<T>(const Var<T>&);                                                     \
  template Var<T> avg_pool2x<T>(const Var<T>&);                                                              \
  template Var<T> leaky_relu<T>(const Var<T>&, double);                                                      \
  template Var<T> sigmoid<T>(const Var<T>&);                                                                 \
  template Var<T> instance_norm<T>(const Var<T>&, double);                                                   \
  template Var<T> hadamard<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> concat_channels<T>(std::span<const Var<T>>);                                               \
  template Var<T> crop2d<T>(const Var<T>&, std::size_t, std::size_t, std::size_t, std::size_t);              \
  template Var<T> sum<T>(const Var<T>&);                                                                     \
  template Var<T> mse_loss<T>(const Var<T>&, const Var<T>&);

DIP_INSTANTIATE(float)
DIP_INSTANTIATE(double)
#undef DIP_INSTANTIATE

}  // namespace dip
