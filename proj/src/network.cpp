#include "dip/network.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dip/ops.hpp"
#include "dip/random.hpp"
#include "json.hpp"

namespace dip {

void NetworkConfig::validate() const {
  if (kernel_size < 3 || kernel_size % 2 == 0) {
    throw std::invalid_argument("network kernel_size must be odd and >= 3, got " + std::to_string(kernel_size));
  }
  if (levels < 1 || levels > 16) throw std::invalid_argument("network levels must be in [1, 16]");
  if (input_channels < 1 || base_filters < 1 || output_channels < 1) {
    throw std::invalid_argument("network channel counts must be positive");
  }
  if (!(leaky_alpha >= 0.0 && leaky_alpha < 1.0)) throw std::invalid_argument("leaky_alpha must be in [0, 1)");
}

std::size_t closed_form_parameter_count(const NetworkConfig& c) {
  const std::size_t f = c.base_filters, k2 = c.kernel_size * c.kernel_size, l = c.levels, s = c.skip_channels;
  const std::size_t concat = f + (s ? s : f);
  return f * c.input_channels * k2 + f + 2 * l * (f * f * k2 + f) + l * (concat * f * k2 + f) + l * (s * f + s) +
         c.output_channels * f + c.output_channels;
}

std::size_t padded_extent(std::size_t n, const NetworkConfig& config) {
  const std::size_t m = config.spatial_multiple();
  return (n + m - 1) / m * m;
}

std::string to_string(OutputActivation a) { return a == OutputActivation::Sigmoid ? "sigmoid" : "none"; }
std::string to_string(Downsample d) { return d == Downsample::StridedConv ? "stride" : "avgpool"; }
std::string to_string(Normalization n) { return n == Normalization::Instance ? "instance" : "none"; }

Normalization parse_normalization(const std::string& s) {
  if (s == "instance") return Normalization::Instance;
  if (s == "none") return Normalization::None;
  throw std::invalid_argument("unknown normalization '" + s + "' (expected instance|none)");
}

OutputActivation parse_output_activation(const std::string& s) {
  if (s == "sigmoid") return OutputActivation::Sigmoid;
  if (s == "none") return OutputActivation::None;
  throw std::invalid_argument("unknown output activation '" + s + "' (expected sigmoid|none)");
}

Downsample parse_downsample(const std::string& s) {
  if (s == "stride") return Downsample::StridedConv;
  if (s == "avgpool") return Downsample::AvgPool;
  throw std::invalid_argument("unknown downsample mode '" + s + "' (expected stride|avgpool)");
}

template <typename T>
Network<T>::Network(const NetworkConfig& config) : config_(config) {
  config_.validate();
  const std::size_t f = config_.base_filters, k = config_.kernel_size;
  const std::size_t s = config_.skip_channels, concat = f + (s ? s : f);
  const bool strided = config_.downsample == Downsample::StridedConv;
  Rng rng(config_.init_seed);

  for (std::size_t lvl = 0; lvl < config_.levels; ++lvl) {
    const std::string base = "enc" + std::to_string(lvl);
    enc_conv_.push_back(add_conv(base + ".conv", lvl == 0 ? config_.input_channels : f, f, k, 1, lvl));
    add_activation(base + ".conv", f, lvl);
    if (s) {
      enc_skip_.push_back(add_conv(base + ".skip", f, s, 1, 1, lvl));
      add_activation(base + ".skip", s, lvl);
    }
    enc_down_.push_back(add_conv(base + ".down", f, f, k, strided ? 2 : 1, lvl));
    add_activation(base + ".down", f, lvl);
    if (!strided) add_layer({base + ".pool", "avg_pool2x", f, f, 2, 2, lvl, ""});
  }
  bottleneck_ = add_conv("bottleneck.conv", f, f, k, 1, config_.levels);
  add_activation("bottleneck.conv", f, config_.levels);
  dec_conv_.resize(config_.levels);
  for (std::size_t i = config_.levels; i-- > 0;) {
    const std::string base = "dec" + std::to_string(i);
    const std::string tap = "enc" + std::to_string(i) + (s ? ".skip.act" : ".conv.act");
    add_layer({base + ".up", "bilinear_upsample2x", f, f, 0, 1, i, ""});
    add_layer({base + ".concat", "concat_channels", concat, concat, 0, 1, i, tap});
    dec_conv_[i] = add_conv(base + ".conv", concat, f, k, 1, i);
    add_activation(base + ".conv", f, i);
  }
  head_ = add_conv("head.conv", f, config_.output_channels, 1, 1, 0);
  if (config_.output_activation == OutputActivation::Sigmoid) {
    add_layer({"head.act", "sigmoid", config_.output_channels, config_.output_channels, 0, 1, 0, ""});
  }

  // Uniform in +-sqrt(1/fan_in), drawn in parameter order.
  for (std::size_t i = 0; i + 1 < params_.size(); i += 2) {
    Tensor<T>& w = params_[i].var.mutable_value();
    const std::size_t fan_in = w.dim(1) * w.dim(2) * w.dim(3);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& v : params_[i + 1].var.mutable_value().data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }
}

template <typename T>
typename Network<T>::Conv Network<T>::add_conv(const std::string& name, std::size_t in, std::size_t out,
                                               std::size_t kernel, std::size_t stride, std::size_t level) {
  Conv c{params_.size(), params_.size() + 1, kernel, stride};
  params_.push_back({name + ".weight", Var<T>(Tensor<T>({out, in, kernel, kernel}), true)});
  params_.push_back({name + ".bias", Var<T>(Tensor<T>({out}), true)});
  add_layer({name, "conv2d", in, out, kernel, stride, level, ""});
  return c;
}

template <typename T>
void Network<T>::add_activation(const std::string& base, std::size_t channels, std::size_t level) {
  const std::size_t c = channels;
  if (config_.normalization == Normalization::Instance) add_layer({base + ".norm", "instance_norm", c, c, 0, 1, level, ""});
  add_layer({base + ".act", "leaky_relu", c, c, 0, 1, level, ""});
}

template <typename T>
Var<T> Network<T>::block(const Conv& conv, const Var<T>& x) const {
  Var<T> y = apply(conv, x, true);
  if (config_.normalization == Normalization::Instance) y = instance_norm(y);
  return leaky_relu(y, static_cast<T>(config_.leaky_alpha));
}

template <typename T>
Var<T> Network<T>::apply(const Conv& conv, const Var<T>& x, bool same_padding) const {
  ConvOptions opt;
  opt.stride = conv.stride;
  opt.padding = same_padding ? Padding::same(conv.kernel, PadMode::Reflect) : Padding::valid();
  return conv2d(x, params_[conv.weight].var, params_[conv.bias].var, opt);
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

template <typename T>
Var<T> Network<T>::forward(const Tensor<T>& z) const {
  const auto& s = z.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != config_.input_channels) {
    throw std::invalid_argument("network input must be (1, " + std::to_string(config_.input_channels) +
                                ", H, W), got " + shape_to_string(s));
  }
  const std::size_t m = config_.spatial_multiple();
  if (s[2] % m != 0 || s[3] % m != 0) {
    throw std::invalid_argument("network input extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                                " must be divisible by 2^levels = " + std::to_string(m));
  }
  const bool strided = config_.downsample == Downsample::StridedConv;
  std::vector<Var<T>> skips;
  Var<T> x(z);
  for (std::size_t lvl = 0; lvl < config_.levels; ++lvl) {
    x = block(enc_conv_[lvl], x);
    skips.push_back(config_.skip_channels ? block(enc_skip_[lvl], x) : x);
    x = block(enc_down_[lvl], x);
    if (!strided) x = avg_pool2x(x);
  }
  x = block(bottleneck_, x);
  for (std::size_t i = config_.levels; i-- > 0;) {
    const Var<T> pair[] = {bilinear_upsample2x(x), skips[i]};
    x = block(dec_conv_[i], concat_channels<T>(pair));
  }
  x = apply(head_, x, false);
  if (config_.output_activation == OutputActivation::Sigmoid) x = sigmoid(x);
  return x;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

namespace {

void write_u64_le(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64_le(std::istream& is) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(is.get())) << (8 * i);
  return v;
}

constexpr char kWeightsMagic[4] = {'D', 'I', 'P', 'W'};

}  // namespace

// Layout: "DIPW", u64 header length, UTF-8 JSON header, then every parameter
// as little-endian float32 in header order.
template <typename T>
void Network<T>::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "dip-weights";
  header["version"] = 1;
  header["dtype"] = "float32";
  header["config"] = {{"input_channels", config_.input_channels}, {"base_filters", config_.base_filters},
                      {"kernel_size", config_.kernel_size},       {"levels", config_.levels},
                      {"leaky_alpha", config_.leaky_alpha},       {"output_channels", config_.output_channels},
                      {"output_activation", to_string(config_.output_activation)},
                      {"downsample", to_string(config_.downsample)},
                      {"normalization", to_string(config_.normalization)},
                      {"skip_channels", config_.skip_channels}};
  header["params"] = nlohmann::json::array();
  for (const auto& p : params_) header["params"].push_back({{"name", p.name}, {"shape", p.var.shape()}});
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(kWeightsMagic, 4);
  write_u64_le(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params_) {
    for (T v : p.var.value().data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
  }
  if (!os) throw std::runtime_error("failed writing weights to '" + path.string() + "'");
}

template <typename T>
void Network<T>::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weights file '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kWeightsMagic, 4)) {
    throw std::runtime_error("'" + path.string() + "' is not a weights file");
  }
  const std::uint64_t len = read_u64_le(is);
  if (!is || len > (std::uint64_t{1} << 30)) throw std::runtime_error("corrupt weights header in '" + path.string() + "'");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  const auto& entries = header.at("params");
  if (entries.size() != params_.size()) {
    throw std::runtime_error("weights file has " + std::to_string(entries.size()) + " parameters, network has " +
                             std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto name = entries[i].at("name").get<std::string>();
    const auto shape = entries[i].at("shape").get<Shape>();
    if (name != params_[i].name || shape != params_[i].var.shape()) {
      throw std::runtime_error("weights entry " + std::to_string(i) + " (" + name + " " + shape_to_string(shape) +
                               ") does not match " + params_[i].name + " " + shape_to_string(params_[i].var.shape()));
    }
  }
  for (auto& p : params_) {
    for (auto& v : p.var.mutable_value().data()) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(is.get())) << (8 * i);
      v = static_cast<T>(std::bit_cast<float>(bits));
    }
  }
  if (!is) throw std::runtime_error("weights file '" + path.string() + "' is truncated");
}

template class Network<float>;
template class Network<double>;

}  // namespace dip
