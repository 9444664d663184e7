#include "dip/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace dip {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "': " + std::strerror(errno));
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  *what = msg;
  png_longjmp(png, 1);
}

void png_quiet(png_structp, png_const_charp) {}

void check_image(const Tensor<double>& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 1) {
    throw std::invalid_argument("only single-channel (1, 1, H, W) images can be written, got " +
                                shape_to_string(image.shape()));
  }
}

LoadedImage read_png(const std::filesystem::path& path) {
  File f = open_file(path, "rb");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_quiet);
  if (!png) throw std::runtime_error("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  png_uint_32 width = 0, height = 0;
  int depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + error);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  int color = 0;
  png_get_IHDR(png, info, &width, &height, &depth, &color, nullptr, nullptr, nullptr);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (png_get_channels(png, info) != 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("cannot reduce PNG '" + path.string() + "' to one channel");
  }
  buffer.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = buffer.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  LoadedImage out{Tensor<double>({1, 1, height, width}), depth == 16 ? ImageFormat::Png16 : ImageFormat::Png8};
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const unsigned char* px = rows[r] + (depth == 16 ? 2 * c : c);
      out.pixels[r * width + c] = depth == 16 ? static_cast<double>((px[0] << 8) | px[1]) / 65535.0
                                              : static_cast<double>(px[0]) / 255.0;
    }
  return out;
}

LoadedImage read_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  unsigned char header[12];
  is.read(reinterpret_cast<char*>(header), 12);
  if (!is) throw std::runtime_error("'" + path.string() + "' is too short for a DIPF header");
  auto u32 = [&](int at) {
    return static_cast<std::uint32_t>(header[at]) | static_cast<std::uint32_t>(header[at + 1]) << 8 |
           static_cast<std::uint32_t>(header[at + 2]) << 16 | static_cast<std::uint32_t>(header[at + 3]) << 24;
  };
  const std::size_t h = u32(4), w = u32(8);
  if (h == 0 || w == 0) throw std::runtime_error("'" + path.string() + "' has zero extent");
  std::vector<unsigned char> bytes(h * w * 4);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw std::runtime_error("'" + path.string() + "' is truncated");
  LoadedImage out{Tensor<double>({1, 1, h, w}), ImageFormat::Raw};
  for (std::size_t i = 0; i < h * w; ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                               static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                               static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
    const float v = std::bit_cast<float>(bits);
    out.pixels[i] = std::isnan(v) ? 0.0 : std::clamp(static_cast<double>(v), 0.0, 1.0);
  }
  return out;
}

}  // namespace

LoadedImage read_image(const std::filesystem::path& path) {
  unsigned char magic[8] = {};
  {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
    is.read(reinterpret_cast<char*>(magic), 8);
  }
  if (std::memcmp(magic, "DIPF", 4) == 0) return read_raw(path);
  if (png_sig_cmp(magic, 0, 8) == 0) return read_png(path);
  throw std::runtime_error("'" + path.string() + "' is neither a PNG nor a DIPF image");
}

void write_png(const std::filesystem::path& path, const Tensor<double>& image, int bit_depth) {
  check_image(image);
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("PNG bit depth must be 8 or 16");
  const std::size_t h = image.dim(2), w = image.dim(3);
  const std::size_t bytes = bit_depth / 8;
  const double levels = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<unsigned char> buffer(h * w * bytes);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::isnan(image[i]) ? 0.0 : std::clamp(image[i], 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(v * levels));
    if (bytes == 2) {
      buffer[2 * i] = static_cast<unsigned char>(q >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(q & 0xFF);
    } else {
      buffer[i] = static_cast<unsigned char>(q);
    }
  }
  File f = open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_quiet);
  if (!png) throw std::runtime_error("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(h);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + error);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < h; ++r) rows[r] = buffer.data() + r * w * bytes;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void write_raw(const std::filesystem::path& path, const Tensor<double>& image) {
  check_image(image);
  const std::size_t h = image.dim(2), w = image.dim(3);
  std::vector<unsigned char> bytes(12 + 4 * h * w);
  std::memcpy(bytes.data(), "DIPF", 4);
  auto put = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  };
  put(4, static_cast<std::uint32_t>(h));
  put(8, static_cast<std::uint32_t>(w));
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::isnan(image[i]) ? 0.0 : std::clamp(image[i], 0.0, 1.0);
    put(12 + 4 * i, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void write_image(const std::filesystem::path& path, const Tensor<double>& image, ImageFormat format) {
  switch (format) {
    case ImageFormat::Png8:
      return write_png(path, image, 8);
    case ImageFormat::Png16:
      return write_png(path, image, 16);
    case ImageFormat::Raw:
      return write_raw(path, image);
  }
}

void write_mask_png(const std::filesystem::path& path, const SamplingMask& mask) {
  Tensor<double> t = mask.as_tensor<double>();
  write_png(path, t, 8);
}

SamplingMask read_mask_png(const std::filesystem::path& path) {
  const auto img = read_image(path).pixels;
  std::vector<std::uint8_t> bits(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bits[i] = img[i] > 0.0 ? 1 : 0;
  return SamplingMask(img.dim(2), img.dim(3), std::move(bits));
}

ImageFormat format_for_path(const std::filesystem::path& path, ImageFormat png_default) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".dipf" || ext == ".raw") return ImageFormat::Raw;
  return png_default == ImageFormat::Raw ? ImageFormat::Png8 : png_default;
}

}  // namespace dip
