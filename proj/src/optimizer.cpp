#include "dip/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "dip/ops.hpp"

namespace dip {

void AmsGradConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("beta1 and beta2 must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (std::isnan(clip_value)) throw std::invalid_argument("clip_value must not be NaN");
}

template <typename T>
AmsGrad<T>::AmsGrad(AmsGradConfig config) : config_(config) {
  config_.validate();
}

template <typename T>
void AmsGrad<T>::step(std::span<Parameter<T>> params) {
  if (t_ == 0) {
    for (const auto& p : params) {
      m_.emplace_back(p.var.shape(), 0.0);
      v_.emplace_back(p.var.shape(), 0.0);
      vmax_.emplace_back(p.var.shape(), 0.0);
    }
  } else if (params.size() != m_.size()) {
    throw std::invalid_argument("AMSGrad: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].var.shape() != m_[i].shape()) {
      throw std::invalid_argument("AMSGrad: shape of " + params[i].name + " changed between steps");
    }
    if (params[i].var.has_grad()) {
      for (T g : params[i].var.grad().data()) {
        if (std::isnan(g)) throw std::runtime_error("AMSGrad: NaN gradient in parameter " + params[i].name);
      }
    }
  }

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2, tau = config_.clip_value;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& var = params[i].var;
    const bool has = var.has_grad();
    auto theta = var.mutable_value().data();
    double* m = m_[i].raw();
    double* v = v_[i].raw();
    double* vm = vmax_[i].raw();
    const T* grad = has ? var.grad().raw() : nullptr;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      double g = has ? static_cast<double>(grad[j]) : 0.0;
      if (tau > 0.0) g = std::clamp(g, -tau, tau);
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      vm[j] = std::max(vm[j], v[j]);
      const double update = config_.learning_rate * (m[j] / c1) / (std::sqrt(vm[j] / c2) + config_.eps);
      theta[j] = static_cast<T>(static_cast<double>(theta[j]) - update);
    }
  }
}

template <typename T>
Tensor<T> perturb_input(const Tensor<T>& z0, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("perturbation sigma must be >= 0");
  Tensor<T> z = z0;
  if (sigma == 0.0) return z;
  for (auto& v : z.data()) v = static_cast<T>(static_cast<double>(v) + rng.normal(0.0, sigma));
  return z;
}

void DipRunConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (!(sigma_z >= 0.0)) throw std::invalid_argument("sigma_z must be >= 0");
  if (!(z0_max > 0.0)) throw std::invalid_argument("z0_max must be positive");
  optimizer.validate();
}

CropWindow network_window(std::size_t h, std::size_t w, const NetworkConfig& config) {
  const std::size_t ph = padded_extent(h, config), pw = padded_extent(w, config);
  return {ph, pw, (ph - h) / 2, (pw - w) / 2};
}

namespace {

// Tracks a fixed random subset of v_max entries and counts decreases.
class VmaxAuditor {
 public:
  VmaxAuditor(const std::vector<Tensor<double>>& vmax, std::size_t samples, std::uint64_t seed) {
    std::size_t total = 0;
    for (const auto& t : vmax) total += t.size();
    Rng rng(seed);
    for (std::size_t s = 0; s < std::min(samples, total); ++s) {
      std::size_t flat = static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(total)));
      std::size_t which = 0;
      while (flat >= vmax[which].size()) flat -= vmax[which++].size();
      picks_.push_back({which, flat});
      last_.push_back(vmax[which][flat]);
    }
  }

  void check(const std::vector<Tensor<double>>& vmax, VmaxAudit& audit) {
    ++audit.checks;
    for (std::size_t s = 0; s < picks_.size(); ++s) {
      const double now = vmax[picks_[s].first][picks_[s].second];
      if (now < last_[s]) ++audit.violations;
      last_[s] = now;
    }
  }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> picks_;
  std::vector<double> last_;
};

}  // namespace

template <typename T>
DipResult<T> dip_optimize(const Tensor<T>& x0, const SamplingMask& mask, const NetworkConfig& net_config,
                          const DipRunConfig& run, const DipProgress& progress) {
  run.validate();
  const auto& s = x0.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != net_config.output_channels) {
    throw std::invalid_argument("dip_optimize: x0 must be (1, " + std::to_string(net_config.output_channels) +
                                ", H, W), got " + shape_to_string(s));
  }
  if (s[2] != mask.height() || s[3] != mask.width()) {
    throw std::invalid_argument("dip_optimize: x0 " + shape_to_string(s) + " does not match mask " +
                                std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
  for (T v : x0.data()) {
    if (!(v >= T(0) && v <= T(1))) throw std::invalid_argument("dip_optimize: x0 values must lie in [0, 1]");
  }
  const std::size_t h = s[2], w = s[3];
  Network<T> net(net_config);
  const CropWindow win = network_window(h, w, net_config);

  Rng z_rng(derive_seed(run.seed, 1));
  Tensor<T> z0({1, net_config.input_channels, win.padded_h, win.padded_w});
  for (auto& v : z0.data()) v = static_cast<T>(z_rng.uniform(0.0, run.z0_max));
  Rng noise_rng(derive_seed(run.seed, 2));

  const Var<T> mask_var(mask.as_tensor<T>());
  const Var<T> target(x0);
  auto predict = [&](const Tensor<T>& z) {
    Var<T> y = net.forward(z);
    if (win.padded_h != h || win.padded_w != w) y = crop2d(y, win.top, win.left, h, w);
    return y;
  };

  DipResult<T> result;
  result.history.masked_mse.reserve(run.iterations);
  result.history.seconds.reserve(run.iterations);
  AmsGrad<T> opt(run.optimizer);
  std::optional<VmaxAuditor> auditor;

  for (std::size_t it = 0; it < run.iterations; ++it) {
    const auto start = std::chrono::steady_clock::now();
    net.zero_grad();
    const Tensor<T> z = perturb_input(z0, run.sigma_z, noise_rng);
    const Var<T> loss = mse_loss(hadamard(predict(z), mask_var), target);
    const double value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(value)) {
      throw std::runtime_error("dip_optimize: loss diverged (" + std::to_string(value) + ") at iteration " +
                               std::to_string(it));
    }
    backward(loss);
    opt.step(net.parameters());
    if (!auditor) auditor.emplace(opt.max_second_moment(), run.audit_samples, derive_seed(run.seed, 3));
    if (run.audit_every > 0 && (it + 1) % run.audit_every == 0) auditor->check(opt.max_second_moment(), result.audit);

    result.history.masked_mse.push_back(value);
    result.history.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (run.snapshot_every > 0 && (it + 1) % run.snapshot_every == 0) {
      result.snapshots.push_back({it + 1, predict(z0).value()});
    }
    if (progress) progress(it, value);
  }
  result.restored = predict(z0).value();
  return result;
}

template class AmsGrad<float>;
template class AmsGrad<double>;
template Tensor<float> perturb_input(const Tensor<float>&, double, Rng&);
template Tensor<double> perturb_input(const Tensor<double>&, double, Rng&);
template DipResult<float> dip_optimize(const Tensor<float>&, const SamplingMask&, const NetworkConfig&,
                                       const DipRunConfig&, const DipProgress&);
template DipResult<double> dip_optimize(const Tensor<double>&, const SamplingMask&, const NetworkConfig&,
                                        const DipRunConfig&, const DipProgress&);

}  // namespace dip
