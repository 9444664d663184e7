#pragma once

#include <filesystem>

#include "dip/sampling.hpp"
#include "dip/tensor.hpp"

namespace dip {

enum class ImageFormat { Png8, Png16, Raw };

struct LoadedImage {
  Tensor<double> pixels;  // (1, 1, H, W) in [0, 1]
  ImageFormat format;
};

// Grayscale PNG (8 or 16 bit; colour is converted to luma) or the raw "DIPF"
// float format, detected from the file's magic bytes.
LoadedImage read_image(const std::filesystem::path& path);

// Values are clamped to [0, 1]; PNG samples are rounded to the nearest level.
void write_png(const std::filesystem::path& path, const Tensor<double>& image, int bit_depth = 8);
void write_raw(const std::filesystem::path& path, const Tensor<double>& image);
void write_image(const std::filesystem::path& path, const Tensor<double>& image, ImageFormat format);

// Masks are stored as 8-bit PNG with 0 and 255; any nonzero pixel reads as 1.
void write_mask_png(const std::filesystem::path& path, const SamplingMask& mask);
SamplingMask read_mask_png(const std::filesystem::path& path);

// Raw for .dipf/.raw, PNG otherwise.
ImageFormat format_for_path(const std::filesystem::path& path, ImageFormat png_default = ImageFormat::Png8);

}  // namespace dip
