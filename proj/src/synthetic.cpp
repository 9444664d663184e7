#include "dip/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "dip/random.hpp"

namespace dip {

namespace {

struct Point {
  double x, y, width;
};

struct Curve {
  std::vector<Point> points;
  std::vector<double> heading;
  double amplitude;
};

constexpr double kStep = 0.5;

Curve trace(double x, double y, double heading, double width, double amplitude, double max_length,
            const SyntheticSpec& spec, Rng& rng) {
  Curve c;
  c.amplitude = amplitude;
  const double margin = spec.max_width * 2.0;
  double turn = 0.0;
  for (double len = 0.0; len < max_length; len += kStep) {
    c.points.push_back({x, y, width});
    c.heading.push_back(heading);
    turn = 0.92 * turn + rng.normal(0.0, spec.curvature * 0.25);
    heading += turn * kStep;
    x += kStep * std::cos(heading);
    y += kStep * std::sin(heading);
    width = std::max(spec.min_width, width * (1.0 - 0.0015 * kStep));
    if (x < -margin || y < -margin || x > static_cast<double>(spec.width) + margin ||
        y > static_cast<double>(spec.height) + margin) {
      break;
    }
  }
  return c;
}

void render(const Curve& c, std::vector<double>& best, const SyntheticSpec& spec) {
  const long h = static_cast<long>(spec.height), w = static_cast<long>(spec.width);
  for (std::size_t i = 0; i + 1 < c.points.size(); ++i) {
    const Point& a = c.points[i];
    const Point& b = c.points[i + 1];
    const double sigma = std::max(a.width, b.width) / 2.3548;
    const double reach = 3.5 * sigma + kStep;
    const long x0 = std::max(0L, static_cast<long>(std::floor(std::min(a.x, b.x) - reach)));
    const long x1 = std::min(w - 1, static_cast<long>(std::ceil(std::max(a.x, b.x) + reach)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(std::min(a.y, b.y) - reach)));
    const long y1 = std::min(h - 1, static_cast<long>(std::ceil(std::max(a.y, b.y) + reach)));
    const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy;
    for (long py = y0; py <= y1; ++py)
      for (long px = x0; px <= x1; ++px) {
        const double fx = static_cast<double>(px) - a.x, fy = static_cast<double>(py) - a.y;
        const double t = len2 > 0.0 ? std::clamp((fx * dx + fy * dy) / len2, 0.0, 1.0) : 0.0;
        const double ex = fx - t * dx, ey = fy - t * dy;
        const double s = (a.width + t * (b.width - a.width)) / 2.3548;
        const double v = c.amplitude * std::exp(-(ex * ex + ey * ey) / (2.0 * s * s));
        double& cell = best[static_cast<std::size_t>(py * w + px)];
        cell = std::max(cell, v);
      }
  }
}

}  // namespace

Tensor<double> synthetic_vessels(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.height == 0 || spec.width == 0) throw std::invalid_argument("synthetic image extents must be positive");
  if (!(spec.min_width > 0.0) || spec.max_width < spec.min_width) {
    throw std::invalid_argument("synthetic vessel widths must satisfy 0 < min_width <= max_width");
  }
  if (!(spec.background >= 0.0 && spec.background < 1.0)) throw std::invalid_argument("background must be in [0, 1)");
  Rng rng(seed);
  const double hh = static_cast<double>(spec.height), ww = static_cast<double>(spec.width);
  const double span = hh + ww;
  std::vector<Curve> curves;
  for (std::size_t i = 0; i < spec.trunks; ++i) {
    // Enter from a random border point, heading roughly toward the centre.
    double x, y;
    const double u = rng.uniform(0.0, 1.0);
    switch (static_cast<int>(rng.uniform(0.0, 4.0))) {
      case 0:
        x = u * ww, y = 0.0;
        break;
      case 1:
        x = u * ww, y = hh - 1.0;
        break;
      case 2:
        x = 0.0, y = u * hh;
        break;
      default:
        x = ww - 1.0, y = u * hh;
        break;
    }
    const double toward = std::atan2(hh / 2.0 - y, ww / 2.0 - x) + rng.uniform(-0.6, 0.6);
    const double width = rng.uniform(0.6 * spec.max_width, spec.max_width);
    curves.push_back(trace(x, y, toward, width, rng.uniform(0.65, 1.0), 2.0 * span, spec, rng));
  }
  const std::size_t trunks = curves.size();
  for (std::size_t i = 0; i < spec.branches && trunks > 0; ++i) {
    const Curve& parent = curves[static_cast<std::size_t>(rng.uniform(0.0, static_cast<double>(trunks)))];
    if (parent.points.size() < 4) continue;
    const auto at = static_cast<std::size_t>(rng.uniform(0.1, 0.9) * static_cast<double>(parent.points.size()));
    const Point& p = parent.points[at];
    const double side = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    const double heading = parent.heading[at] + side * rng.uniform(0.5, 1.3);
    const double width = rng.uniform(spec.min_width, std::max(spec.min_width, 0.8 * p.width));
    const double amp = parent.amplitude * rng.uniform(0.7, 1.0);
    curves.push_back(trace(p.x, p.y, heading, width, amp, rng.uniform(0.25, 0.6) * span, spec, rng));
  }

  std::vector<double> best(spec.height * spec.width, 0.0);
  for (const auto& c : curves) render(c, best, spec);
  Tensor<double> img({1, 1, spec.height, spec.width});
  for (std::size_t i = 0; i < best.size(); ++i) {
    img[i] = std::clamp(spec.background + (1.0 - spec.background) * best[i], 0.0, 1.0);
  }
  return img;
}

}  // namespace dip
