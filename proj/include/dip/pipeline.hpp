#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dip/baselines.hpp"
#include "dip/metrics.hpp"
#include "dip/optimizer.hpp"
#include "dip/sampling.hpp"
#include "dip/synthetic.hpp"

namespace dip {

enum class BlendKind { Linear, Cosine };
std::string to_string(BlendKind kind);
BlendKind parse_blend(const std::string& name);

// Blend weights are separable: weight(y, x) = row_weight[y] * col_weight[x].
// Per-axis weights are multiples of 2^-20, so every 2-D weight and every sum
// of them is exact in double precision.
struct PatchTile {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  std::size_t grid_row = 0, grid_col = 0;
  std::vector<double> row_weight;  // length height
  std::vector<double> col_weight;  // length width

  double weight(std::size_t y, std::size_t x) const { return row_weight[y] * col_weight[x]; }
  Tensor<double> weight_map() const;  // (1, 1, height, width)
};

struct PatchPlan {
  std::size_t height = 0, width = 0;
  std::size_t tile = 300, overlap = 32;
  BlendKind blend = BlendKind::Linear;
  std::size_t grid_rows = 0, grid_cols = 0;
  std::vector<PatchTile> tiles;  // row-major over the tile grid

  // Sum of all tile weight maps on the full image grid.
  Tensor<double> weight_sum() const;
};

// Raster tiling with stride T - O; the last tile on each axis is anchored to
// the image boundary. Images no larger than T on an axis get a single tile.
PatchPlan plan_patches(std::size_t height, std::size_t width, std::size_t tile = 300, std::size_t overlap = 32,
                       BlendKind blend = BlendKind::Linear);

// Per-tile output for the rectangle of `tile`; must be (1, C, tile.height, tile.width).
using TileFunction = std::function<Tensor<double>(std::size_t index, const PatchTile& tile)>;

// Runs fn on every tile (in a pool of `workers` threads) and blends the results.
// Tiles listed in `skip` are not evaluated; their output is replaced by the
// weighted mean of the neighbouring evaluated tiles' means.
Tensor<double> patchwork_apply(const PatchPlan& plan, std::size_t channels, const TileFunction& fn,
                               const std::vector<bool>& skip = {}, std::size_t workers = 1);

struct PatchworkResult {
  Tensor<double> image;                 // (1, O, H, W)
  std::vector<LossHistory> histories;   // one per tile, empty for skipped tiles
  std::vector<Snapshot<double>> snapshots;  // tile snapshots blended like the final output
  VmaxAudit audit;                      // summed over tiles
  std::vector<std::string> flags;
};

// Per-tile dip_optimize on the tile's crop of the sparse data and mask, then
// blended. Tile k is seeded with indexed_seed(seed, k), so a single-tile plan
// reproduces a direct dip_optimize call. Tiles with no sampled pixel are
// filled from their neighbours and flagged.
template <typename T>
PatchworkResult patchwork_restore(const Tensor<double>& sparse, const SamplingMask& mask,
                                  const NetworkConfig& net_config, const DipRunConfig& run_config,
                                  const PatchPlan& plan, std::size_t workers = 1);

struct ImageInput {
  std::string name;
  std::filesystem::path path;            // read when pixels is empty
  std::optional<Tensor<double>> pixels;  // (1, 1, H, W) in [0, 1]
};

enum class Precision { Float, Double };

struct ExperimentConfig {
  std::vector<ImageInput> images;
  std::vector<SamplingPattern> patterns;
  std::vector<std::string> methods;  // "dip", "bilinear", "bicubic", "lanczos"
  NetworkConfig net;
  DipRunConfig run;
  Precision precision = Precision::Float;
  double bicubic_a = -0.5;
  int lanczos_a = 4;
  std::size_t tile = 300;
  std::size_t overlap = 32;
  BlendKind blend = BlendKind::Linear;
  std::filesystem::path output_dir;  // empty: nothing is written
  std::uint64_t master_seed = 0;
  std::size_t workers = 0;           // 0: Runtime worker_threads
  SsimParams ssim;

  void validate() const;
};

// Synthetic corpus named synth_000, synth_001, ... with seeds derived from seed.
std::vector<ImageInput> synthetic_corpus(std::size_t count, const SyntheticSpec& spec, std::uint64_t seed);

// Called once per finished job with a one-line description.
using ExperimentLog = std::function<void(const std::string&)>;

// For each (image, pattern): build the mask, degrade, restore with every
// method, clamp to [0, 1] and score against the ground truth. Unreadable
// inputs and failed jobs are listed in the report and the run continues.
MetricsReport run_experiment(const ExperimentConfig& config, const ExperimentLog& log = {});

}  // namespace dip
