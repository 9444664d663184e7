#pragma once

#include <cstdint>

#include "dip/tensor.hpp"

namespace dip {

struct SyntheticSpec {
  std::size_t height = 96;
  std::size_t width = 96;
  std::size_t trunks = 3;           // vessels entering from the border
  std::size_t branches = 4;         // side branches spawned along trunks
  double min_width = 4.0;           // full width at half maximum, pixels
  double max_width = 14.0;
  double background = 0.05;
  double curvature = 0.06;          // std of heading change per unit step, radians
};

// Seeded vessel-like image in [0, 1], shape (1, 1, H, W): smooth random
// curves with Gaussian cross-sections over a dim background. Intensity is a
// function of distance to the centreline, so edges are anti-aliased.
Tensor<double> synthetic_vessels(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace dip
