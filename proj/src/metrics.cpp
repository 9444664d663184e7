#include "dip/metrics.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

namespace dip {

void SsimParams::validate() const {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("SSIM window must be odd and positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("SSIM sigma must be positive");
  if (!(k1 > 0.0) || !(k2 > 0.0)) throw std::invalid_argument("SSIM K1 and K2 must be positive");
  if (!(dynamic_range > 0.0)) throw std::invalid_argument("SSIM dynamic range must be positive");
}

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

// Valid-mode separable filtering of an h x w plane with a 1-D kernel.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size(), ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * src[y * w + x + i];
      tmp[y * ow + x] = acc;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

template <typename T>
double psnr(const Tensor<T>& ref, const Tensor<T>& test, double max_val) {
  require_same(ref, test, "psnr");
  if (!(max_val > 0.0)) throw std::invalid_argument("psnr: max_val must be positive");
  double se = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = static_cast<double>(ref[i]) - static_cast<double>(test[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(ref.size());
  return 10.0 * std::log10(max_val * max_val / mse);
}

template <typename T>
double ssim(const Tensor<T>& ref, const Tensor<T>& test, const SsimParams& p) {
  require_same(ref, test, "ssim");
  p.validate();
  if (ref.rank() < 2) throw std::invalid_argument("ssim: images need at least two axes");
  const std::size_t h = ref.dim(ref.rank() - 2), w = ref.dim(ref.rank() - 1);
  if (h < p.window || w < p.window) {
    throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " is smaller than the " + std::to_string(p.window) + "x" + std::to_string(p.window) +
                                " window");
  }
  std::vector<double> g(p.window);
  double gs = 0.0;
  const double centre = static_cast<double>(p.window - 1) / 2.0;
  for (std::size_t i = 0; i < p.window; ++i) {
    const double d = static_cast<double>(i) - centre;
    g[i] = std::exp(-d * d / (2.0 * p.sigma * p.sigma));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;
  const double c1 = std::pow(p.k1 * p.dynamic_range, 2), c2 = std::pow(p.k2 * p.dynamic_range, 2);

  const std::size_t plane = h * w, planes = ref.size() / plane;
  double total = 0.0;
  for (std::size_t q = 0; q < planes; ++q) {
    std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] = static_cast<double>(ref[q * plane + i]);
      b[i] = static_cast<double>(test[q * plane + i]);
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto ma = filter_valid(a, h, w, g), mb = filter_valid(b, h, w, g);
    const auto saa = filter_valid(aa, h, w, g), sbb = filter_valid(bb, h, w, g), sab = filter_valid(ab, h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
      acc += ((2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(ma.size());
  }
  return total / static_cast<double>(planes);
}

double sample_mean(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean of an empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("standard deviation of an empty sample");
  if (v.size() == 1) return 0.0;
  bool constant = true;
  for (double x : v) constant = constant && x == v.front();
  if (constant) return 0.0;
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

MetricsReport aggregate(const std::vector<MetricRow>& rows) {
  MetricsReport report;
  report.rows = rows;
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.pattern, r.method);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.first.push_back(r.ssim);
    it->second.second.push_back(r.psnr_db);
  }
  for (const auto& key : order) {
    const auto& [s, p] = groups.at(key);
    report.aggregates.push_back(
        {key.first, key.second, sample_mean(s), sample_sd(s), sample_mean(p), sample_sd(p), s.size()});
  }
  return report;
}

double anova_f(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw std::invalid_argument("anova_f needs at least two groups");
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw std::invalid_argument("anova_f needs at least two samples per group");
    for (double v : g) total += v;
    n += g.size();
  }
  const double grand = total / static_cast<double>(n);
  double ssb = 0.0, ssw = 0.0;
  for (const auto& g : groups) {
    const double m = sample_mean(g);
    ssb += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double v : g) ssw += (v - m) * (v - m);
  }
  const double k = static_cast<double>(groups.size());
  const double msb = ssb / (k - 1.0), msw = ssw / (static_cast<double>(n) - k);
  if (msb == 0.0) return 0.0;
  if (msw == 0.0) return std::numeric_limits<double>::infinity();
  return msb / msw;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

// Quote a CSV field only when it needs it.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_report_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "image,pattern,method,ssim,psnr_db\n";
  for (const auto& r : rows) {
    os << csv_field(r.image) << ',' << csv_field(r.pattern) << ',' << csv_field(r.method) << ','
       << format_number(r.ssim) << ',' << format_number(r.psnr_db) << '\n';
  }
}

void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "pattern,method,ssim_mean,ssim_sd,psnr_mean,psnr_sd,n\n";
  for (const auto& r : rows) {
    os << csv_field(r.pattern) << ',' << csv_field(r.method) << ',' << format_number(r.ssim_mean) << ','
       << format_number(r.ssim_sd) << ',' << format_number(r.psnr_mean) << ',' << format_number(r.psnr_sd) << ','
       << r.n << '\n';
  }
}

template double psnr(const Tensor<float>&, const Tensor<float>&, double);
template double psnr(const Tensor<double>&, const Tensor<double>&, double);
template double ssim(const Tensor<float>&, const Tensor<float>&, const SsimParams&);
template double ssim(const Tensor<double>&, const Tensor<double>&, const SsimParams&);

}  // namespace dip
