#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dip/tensor.hpp"

namespace dip {

struct SsimParams {
  std::size_t window = 11;  // Gaussian window side
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;
};

// 10 log10(max^2 / MSE); +inf when the images are identical.
template <typename T>
double psnr(const Tensor<T>& ref, const Tensor<T>& test, double max_val = 1.0);

// Mean of the local SSIM map over all fully contained windows. Multi-plane
// tensors are scored per plane and averaged.
template <typename T>
double ssim(const Tensor<T>& ref, const Tensor<T>& test, const SsimParams& params = {});

struct MetricRow {
  std::string image;
  std::string pattern;
  std::string method;
  double ssim = 0.0;
  double psnr_db = 0.0;
};

struct AggregateRow {
  std::string pattern;
  std::string method;
  double ssim_mean = 0.0;
  double ssim_sd = 0.0;
  double psnr_mean = 0.0;
  double psnr_sd = 0.0;
  std::size_t n = 0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;
  std::vector<AggregateRow> aggregates;  // groups in order of first appearance
  std::vector<std::string> failures;     // one message per failed input
  std::vector<std::string> flags;        // notable but non-fatal events
};

// Sample mean and n-1 standard deviation; SD is 0 for a single value.
double sample_mean(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);

MetricsReport aggregate(const std::vector<MetricRow>& rows);

// One-way ANOVA F = MS_between / MS_within. Returns 0 when there is no
// between-group variance and +inf when only the within-group variance is 0.
double anova_f(const std::vector<std::vector<double>>& groups);

// Shortest round-trip decimal; "inf", "-inf" and "nan" for non-finite values.
std::string format_number(double v);

void write_report_csv(std::ostream& os, const std::vector<MetricRow>& rows);
void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows);

}  // namespace dip
