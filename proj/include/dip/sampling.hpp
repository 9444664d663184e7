#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dip/tensor.hpp"

namespace dip {

// Keep every sx-th column (fast axis) of every sy-th row (slow axis).
struct SamplingPattern {
  std::size_t sx = 1;
  std::size_t sy = 1;
  std::size_t offset_x = 0;
  std::size_t offset_y = 0;

  void validate() const;
  // "7x3", or "7x3+1+2" when offsets are nonzero. Safe for file names.
  std::string label() const;
  // Accepts "Sx,Sy", "SxxSy" and either form followed by ",ox,oy".
  static SamplingPattern parse(const std::string& text);

  bool operator==(const SamplingPattern&) const = default;
};

// The six patterns [4,1] [5,1] [6,1] [7,3] [10,5] [6,12].
const std::vector<SamplingPattern>& preset_patterns();

// Number of sampled indices along an axis of extent n.
std::size_t sampled_extent(std::size_t n, std::size_t step, std::size_t offset);

struct Fraction {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Fraction&) const = default;
};

class SamplingMask {
 public:
  SamplingMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t count() const noexcept { return count_; }
  // Reduced count / (H*W).
  Fraction density() const;
  bool at(std::size_t row, std::size_t col) const { return bits_[row * width_ + col] != 0; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  // (1, 1, H, W) tensor of zeros and ones.
  template <typename T>
  Tensor<T> as_tensor() const;

  // Crop to a rectangle; used by the tiler.
  SamplingMask crop(std::size_t top, std::size_t left, std::size_t h, std::size_t w) const;

  bool operator==(const SamplingMask&) const = default;

 private:
  std::size_t height_, width_, count_;
  std::vector<std::uint8_t> bits_;
};

SamplingMask build_mask(std::size_t height, std::size_t width, const SamplingPattern& pattern);

// Zeroes every unsampled pixel; sampled values are copied bit for bit.
// The image is (N, C, H, W) with H, W matching the mask.
template <typename T>
Tensor<T> degrade(const Tensor<T>& image, const SamplingMask& mask);

// Sampled pixels only, as a (N, C, ceil-rows, ceil-cols) grid in raster order.
template <typename T>
Tensor<T> extract_lowres(const Tensor<T>& image, const SamplingPattern& pattern);

// Inverse placement of extract_lowres onto a zero (N, C, height, width) grid.
template <typename T>
Tensor<T> scatter_lowres(const Tensor<T>& lowres, const SamplingPattern& pattern, std::size_t height,
                         std::size_t width);

// Scan-time reduction factor Sx * Sy.
double speedup(const SamplingPattern& pattern);

}  // namespace dip
