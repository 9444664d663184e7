#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dip/network.hpp"
#include "dip/random.hpp"
#include "dip/sampling.hpp"

namespace dip {

struct AmsGradConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_value = 10.0;  // elementwise; <= 0 disables

  void validate() const;
};

// AMSGrad with elementwise gradient clipping. Bias correction is applied to
// both the first moment and the running max of the second moment.
template <typename T>
class AmsGrad {
 public:
  explicit AmsGrad(AmsGradConfig config = {});

  // One update using the grads currently held by params. Parameters without
  // a gradient are treated as having a zero gradient.
  void step(std::span<Parameter<T>> params);

  const AmsGradConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return t_; }
  const std::vector<Tensor<double>>& first_moment() const noexcept { return m_; }
  const std::vector<Tensor<double>>& second_moment() const noexcept { return v_; }
  const std::vector<Tensor<double>>& max_second_moment() const noexcept { return vmax_; }

 private:
  AmsGradConfig config_;
  std::size_t t_ = 0;
  std::vector<Tensor<double>> m_, v_, vmax_;
};

// z0 + z' with z' ~ N(0, sigma^2) drawn fresh from rng.
template <typename T>
Tensor<T> perturb_input(const Tensor<T>& z0, double sigma, Rng& rng);

struct DipRunConfig {
  std::size_t iterations = 5000;
  double sigma_z = 0.07;
  std::size_t snapshot_every = 1000;  // 0 disables
  std::uint64_t seed = 0;
  double z0_max = 0.1;  // base input is uniform in [0, z0_max)
  AmsGradConfig optimizer;
  // v_max monotonicity audit: every audit_every steps, audit_samples entries.
  std::size_t audit_every = 1;
  std::size_t audit_samples = 256;

  void validate() const;
};

struct LossHistory {
  std::vector<double> masked_mse;  // loss evaluated before update i
  std::vector<double> seconds;     // wall clock of iteration i
  std::size_t size() const noexcept { return masked_mse.size(); }
};

template <typename T>
struct Snapshot {
  std::size_t iteration;  // completed updates
  Tensor<T> image;
};

struct VmaxAudit {
  std::size_t checks = 0;
  std::size_t violations = 0;
  bool ok() const noexcept { return violations == 0; }
};

template <typename T>
struct DipResult {
  Tensor<T> restored;  // forward(z0) after the last update, (1, O, H, W)
  LossHistory history;
  std::vector<Snapshot<T>> snapshots;
  VmaxAudit audit;
};

// Called after every iteration with (iteration index, masked loss).
using DipProgress = std::function<void(std::size_t, double)>;

// Fits a freshly initialized network so that forward(z) on the sampled pixels
// matches x0. Extents not divisible by 2^levels are handled by running the
// network on a padded grid and center-cropping its output.
template <typename T>
DipResult<T> dip_optimize(const Tensor<T>& x0, const SamplingMask& mask, const NetworkConfig& net_config,
                          const DipRunConfig& run_config, const DipProgress& progress = {});

// Offset of the H x W crop inside the padded network grid.
struct CropWindow {
  std::size_t padded_h, padded_w, top, left;
};
CropWindow network_window(std::size_t h, std::size_t w, const NetworkConfig& config);

extern template class AmsGrad<float>;
extern template class AmsGrad<double>;

}  // namespace dip
