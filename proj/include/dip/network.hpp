#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dip/autograd.hpp"

namespace dip {

enum class OutputActivation { Sigmoid, None };
enum class Downsample { StridedConv, AvgPool };
enum class Normalization { None, Instance };

struct NetworkConfig {
  std::size_t input_channels = 32;
  std::size_t base_filters = 64;  // every inner layer
  std::size_t kernel_size = 11;
  std::size_t levels = 4;
  double leaky_alpha = 0.2;
  std::size_t output_channels = 1;
  OutputActivation output_activation = OutputActivation::Sigmoid;
  Downsample downsample = Downsample::StridedConv;
  // Parameter-free per-channel normalization between each inner conv and its
  // activation.
  Normalization normalization = Normalization::Instance;
  // Width of each skip path. 0 concatenates the encoder tap as is; otherwise
  // a 1x1 conv block projects it to this many channels first.
  std::size_t skip_channels = 1;
  std::uint64_t init_seed = 0;

  void validate() const;
  // Input spatial extents must be multiples of this.
  std::size_t spatial_multiple() const { return std::size_t{1} << levels; }
};

// One entry per layer in execution order.
struct LayerSpec {
  std::string name;
  std::string op;  // graph op tag the layer records
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t level = 0;
  std::string skip_from;  // encoder layer feeding a concat
};

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
};

// Encoder-decoder with constant width and same-resolution skip concatenation.
// Per encoder level: conv, leaky_relu (skip tapped here), downsampling conv,
// leaky_relu. Bottleneck: conv, leaky_relu. Per decoder level: bilinear 2x
// upsample, concat with the skip, conv, leaky_relu. Head: 1x1 conv and the
// output activation. With skip_channels > 0 each skip passes through a 1x1
// conv and leaky_relu before the concat. No transposed convolution anywhere.
// With instance normalization enabled every conv except the head is followed
// by it.
template <typename T>
class Network {
 public:
  explicit Network(const NetworkConfig& config);

  const NetworkConfig& config() const noexcept { return config_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  const std::vector<LayerSpec>& topology() const noexcept { return layers_; }
  std::size_t parameter_count() const;

  // z is (1, input_channels, H, W) with H, W multiples of spatial_multiple().
  Var<T> forward(const Tensor<T>& z) const;
  void zero_grad();

  void save(const std::filesystem::path& path) const;
  // Replaces weights in place; names and shapes must match this network.
  void load(const std::filesystem::path& path);

 private:
  struct Conv {
    std::size_t weight;  // index into params_
    std::size_t bias;
    std::size_t kernel;
    std::size_t stride;
  };

  Conv add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                std::size_t level);
  void add_layer(LayerSpec spec) { layers_.push_back(std::move(spec)); }
  void add_activation(const std::string& base, std::size_t channels, std::size_t level);
  Var<T> apply(const Conv& conv, const Var<T>& x, bool same_padding) const;
  // Reflection-padded conv, optional normalization, leaky_relu.
  Var<T> block(const Conv& conv, const Var<T>& x) const;

  NetworkConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<LayerSpec> layers_;
  std::vector<Conv> enc_conv_, enc_down_, enc_skip_, dec_conv_;
  Conv bottleneck_{}, head_{};
};

template <typename T>
Network<T> build_network(const NetworkConfig& config) {
  return Network<T>(config);
}

// Parameter count of the topology above, evaluated in closed form:
//   F*C*k^2 + F                  first encoder conv
//   + 2L * (F^2 k^2 + F)         remaining encoder convs and the bottleneck
//   + L * ((F + S) F k^2 + F)    decoder convs over concatenated input
//   + L * (S F + S)              1x1 skip projections, only when S > 0
//   + O*F + O                    1x1 head
// where S is skip_channels, or F in the concat width when skip_channels = 0.
std::size_t closed_form_parameter_count(const NetworkConfig& config);

// Smallest multiple of config.spatial_multiple() that is >= n.
std::size_t padded_extent(std::size_t n, const NetworkConfig& config);

std::string to_string(OutputActivation a);
std::string to_string(Downsample d);
std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);
OutputActivation parse_output_activation(const std::string& s);
Downsample parse_downsample(const std::string& s);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace dip
