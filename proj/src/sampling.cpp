#include "dip/sampling.hpp"

#include <charconv>
#include <numeric>
#include <stdexcept>

namespace dip {

void SamplingPattern::validate() const {
  if (sx < 1 || sy < 1) throw std::invalid_argument("sampling steps must be >= 1");
  if (offset_x >= sx || offset_y >= sy) {
    throw std::invalid_argument("sampling offsets must lie in [0, S-1], got offset_x=" + std::to_string(offset_x) +
                                " offset_y=" + std::to_string(offset_y) + " for pattern " + std::to_string(sx) + "," +
                                std::to_string(sy));
  }
}

std::string SamplingPattern::label() const {
  std::string s = std::to_string(sx) + "x" + std::to_string(sy);
  if (offset_x != 0 || offset_y != 0) s += "+" + std::to_string(offset_x) + "+" + std::to_string(offset_y);
  return s;
}

SamplingPattern SamplingPattern::parse(const std::string& text) {
  std::vector<std::size_t> fields;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    std::size_t v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{} || next == p) break;
    fields.push_back(v);
    p = next;
    if (p == end) break;
    if (*p != ',' && !(fields.size() == 1 && *p == 'x')) break;
    ++p;
    if (p == end) fields.clear();  // trailing separator
  }
  if (p != end || (fields.size() != 2 && fields.size() != 4)) {
    throw std::invalid_argument("bad sampling pattern '" + text + "' (expected Sx,Sy or Sx,Sy,offset_x,offset_y)");
  }
  SamplingPattern pat{fields[0], fields[1], 0, 0};
  if (fields.size() == 4) {
    pat.offset_x = fields[2];
    pat.offset_y = fields[3];
  }
  pat.validate();
  return pat;
}

const std::vector<SamplingPattern>& preset_patterns() {
  static const std::vector<SamplingPattern> presets = {
      {4, 1, 0, 0}, {5, 1, 0, 0}, {6, 1, 0, 0}, {7, 3, 0, 0}, {10, 5, 0, 0}, {6, 12, 0, 0}};
  return presets;
}

std::size_t sampled_extent(std::size_t n, std::size_t step, std::size_t offset) {
  return offset >= n ? 0 : (n - offset + step - 1) / step;
}

SamplingMask::SamplingMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), count_(0), bits_(std::move(bits)) {
  if (height == 0 || width == 0) throw std::invalid_argument("mask extents must be positive");
  if (bits_.size() != height * width) throw std::invalid_argument("mask data length does not match extents");
  for (auto& b : bits_) {
    if (b > 1) throw std::invalid_argument("mask values must be 0 or 1");
    count_ += b;
  }
}

Fraction SamplingMask::density() const {
  const std::uint64_t total = height_ * width_;
  const std::uint64_t g = std::gcd<std::uint64_t>(count_, total);
  return {count_ / g, total / g};
}

template <typename T>
Tensor<T> SamplingMask::as_tensor() const {
  Tensor<T> t({1, 1, height_, width_});
  for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = static_cast<T>(bits_[i]);
  return t;
}

SamplingMask SamplingMask::crop(std::size_t top, std::size_t left, std::size_t h, std::size_t w) const {
  if (h == 0 || w == 0 || top + h > height_ || left + w > width_) throw std::out_of_range("mask crop out of bounds");
  std::vector<std::uint8_t> out(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = bits_[(top + r) * width_ + left + c];
  return SamplingMask(h, w, std::move(out));
}

SamplingMask build_mask(std::size_t height, std::size_t width, const SamplingPattern& p) {
  p.validate();
  if (height == 0 || width == 0) throw std::invalid_argument("mask extents must be positive");
  std::vector<std::uint8_t> bits(height * width, 0);
  for (std::size_t r = p.offset_y; r < height; r += p.sy)
    for (std::size_t c = p.offset_x; c < width; c += p.sx) bits[r * width + c] = 1;
  return SamplingMask(height, width, std::move(bits));
}

namespace {

void check_image(const Shape& s, std::size_t h, std::size_t w, const char* what) {
  if (s.size() != 4) throw std::invalid_argument(std::string(what) + ": image must be 4-D, got " + shape_to_string(s));
  if (s[2] != h || s[3] != w) {
    throw std::invalid_argument(std::string(what) + ": image " + shape_to_string(s) + " does not match mask " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

template <typename T>
Tensor<T> degrade(const Tensor<T>& image, const SamplingMask& mask) {
  check_image(image.shape(), mask.height(), mask.width(), "degrade");
  Tensor<T> out(image.shape(), T(0));
  const std::size_t plane = mask.height() * mask.width();
  const auto& bits = mask.bits();
  for (std::size_t base = 0; base < image.size(); base += plane)
    for (std::size_t i = 0; i < plane; ++i)
      if (bits[i]) out[base + i] = image[base + i];
  return out;
}

template <typename T>
Tensor<T> extract_lowres(const Tensor<T>& image, const SamplingPattern& p) {
  p.validate();
  const auto& s = image.shape();
  if (s.size() != 4) throw std::invalid_argument("extract_lowres: image must be 4-D");
  const std::size_t h = s[2], w = s[3];
  const std::size_t lh = sampled_extent(h, p.sy, p.offset_y), lw = sampled_extent(w, p.sx, p.offset_x);
  if (lh == 0 || lw == 0) throw std::invalid_argument("extract_lowres: pattern offsets exceed image extents");
  Tensor<T> out({s[0], s[1], lh, lw});
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc)
    for (std::size_t i = 0; i < lh; ++i)
      for (std::size_t j = 0; j < lw; ++j)
        out[(nc * lh + i) * lw + j] = image[(nc * h + p.offset_y + i * p.sy) * w + p.offset_x + j * p.sx];
  return out;
}

template <typename T>
Tensor<T> scatter_lowres(const Tensor<T>& lowres, const SamplingPattern& p, std::size_t h, std::size_t w) {
  p.validate();
  const auto& s = lowres.shape();
  const std::size_t lh = sampled_extent(h, p.sy, p.offset_y), lw = sampled_extent(w, p.sx, p.offset_x);
  if (s.size() != 4 || s[2] != lh || s[3] != lw) {
    throw std::invalid_argument("scatter_lowres: grid " + shape_to_string(s) + " inconsistent with pattern " +
                                p.label() + " on " + std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor<T> out({s[0], s[1], h, w}, T(0));
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc)
    for (std::size_t i = 0; i < lh; ++i)
      for (std::size_t j = 0; j < lw; ++j)
        out[(nc * h + p.offset_y + i * p.sy) * w + p.offset_x + j * p.sx] = lowres[(nc * lh + i) * lw + j];
  return out;
}

double speedup(const SamplingPattern& p) {
  p.validate();
  return static_cast<double>(p.sx * p.sy);
}

template Tensor<float> SamplingMask::as_tensor<float>() const;
template Tensor<double> SamplingMask::as_tensor<double>() const;
template Tensor<float> degrade(const Tensor<float>&, const SamplingMask&);
template Tensor<double> degrade(const Tensor<double>&, const SamplingMask&);
template Tensor<float> extract_lowres(const Tensor<float>&, const SamplingPattern&);
template Tensor<double> extract_lowres(const Tensor<double>&, const SamplingPattern&);
template Tensor<float> scatter_lowres(const Tensor<float>&, const SamplingPattern&, std::size_t, std::size_t);
template Tensor<double> scatter_lowres(const Tensor<double>&, const SamplingPattern&, std::size_t, std::size_t);

}  // namespace dip
