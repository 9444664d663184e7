#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dip/image_io.hpp"
#include "dip/pipeline.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using dip::BlendKind;
using dip::SamplingPattern;
using dip::Tensor;

namespace {

dip::NetworkConfig tiny_net() {
  dip::NetworkConfig c;
  c.levels = 2;
  c.base_filters = 6;
  c.kernel_size = 3;
  c.input_channels = 4;
  c.init_seed = 5;
  return c;
}

dip::DipRunConfig short_run(std::size_t iterations) {
  dip::DipRunConfig r;
  r.iterations = iterations;
  r.snapshot_every = 0;
  r.seed = 21;
  return r;
}

bool is_quantized(double w) { return std::ldexp(w, 40) == std::floor(std::ldexp(w, 40)); }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dip_pipeline_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Deterministic reductions for the whole test binary.
struct DeterministicScope {
  bool saved;
  DeterministicScope() : saved(dip::Runtime::get().deterministic) { dip::Runtime::get().deterministic = true; }
  ~DeterministicScope() { dip::Runtime::get().deterministic = saved; }
};

}  // namespace

TEST_CASE("image no larger than the tile gets one tile of weight one") {
  const auto plan = dip::plan_patches(120, 90, 300, 32);
  REQUIRE(plan.tiles.size() == 1);
  const auto& t = plan.tiles[0];
  CHECK(t.top == 0);
  CHECK(t.left == 0);
  CHECK(t.height == 120);
  CHECK(t.width == 90);
  const auto m = t.weight_map();
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == 1.0);
}

TEST_CASE("600x600 plan with T=300, O=32 sums to one everywhere") {
  for (BlendKind blend : {BlendKind::Linear, BlendKind::Cosine}) {
    const auto plan = dip::plan_patches(600, 600, 300, 32, blend);
    CHECK(plan.grid_rows == 3);
    CHECK(plan.grid_cols == 3);
    CHECK(plan.tiles.back().top == 300);
    CHECK(plan.tiles.back().left == 300);
    CHECK(plan.tiles[1].left == 268);
    const auto s = plan.weight_sum();
    std::size_t off = 0;
    for (std::size_t i = 0; i < s.size(); ++i) off += s[i] != 1.0;
    CHECK(off == 0);
  }
}

TEST_CASE("two tiles overlapping by O have a complementary seam band") {
  const auto plan = dip::plan_patches(10, 56, 32, 8);
  REQUIRE(plan.tiles.size() == 2);
  const auto& a = plan.tiles[0];
  const auto& b = plan.tiles[1];
  CHECK(b.left == 24);
  for (std::size_t x = 24; x < 32; ++x) {
    const double wa = a.col_weight[x], wb = b.col_weight[x - 24];
    CHECK(wa + wb == 1.0);
    CHECK(wa > 0.0);
    CHECK(wb > 0.0);
    if (x > 24) CHECK(wb > b.col_weight[x - 25]);
  }
  CHECK(a.col_weight[23] == 1.0);
  CHECK(b.col_weight[8] == 1.0);
  CHECK(b.col_weight[0] == doctest::Approx(0.5 / 8.0).epsilon(1e-5));
}

TEST_CASE("plan invariants hold for random geometries") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng() % 160, w = 1 + rng() % 160;
    const std::size_t tile = 2 + rng() % 64;
    const std::size_t overlap = rng() % tile;
    const BlendKind blend = trial % 2 ? BlendKind::Cosine : BlendKind::Linear;
    const auto plan = dip::plan_patches(h, w, tile, overlap, blend);
    CAPTURE(h);
    CAPTURE(w);
    CAPTURE(tile);
    CAPTURE(overlap);
    const auto s = plan.weight_sum();
    bool exact = true, quantized = true, bounded = true, inside = true;
    for (std::size_t i = 0; i < s.size(); ++i) exact = exact && s[i] == 1.0;
    for (const auto& t : plan.tiles) {
      inside = inside && t.top + t.height <= h && t.left + t.width <= w;
      inside = inside && t.height == std::min(tile, h) && t.width == std::min(tile, w);
      for (double v : t.row_weight) quantized = quantized && is_quantized(v), bounded = bounded && v >= 0 && v <= 1;
      for (double v : t.col_weight) quantized = quantized && is_quantized(v), bounded = bounded && v >= 0 && v <= 1;
    }
    CHECK(exact);
    CHECK(quantized);
    CHECK(bounded);
    CHECK(inside);
    CHECK(plan.tiles.back().top + plan.tiles.back().height == h);
    CHECK(plan.tiles.back().left + plan.tiles.back().width == w);
    if (plan.grid_cols > 2) CHECK(plan.tiles[1].left == tile - overlap);
  }
}

TEST_CASE("invalid plan geometry") {
  CHECK_THROWS_AS(dip::plan_patches(10, 10, 8, 8), std::invalid_argument);
  CHECK_THROWS_AS(dip::plan_patches(10, 10, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(dip::plan_patches(0, 10, 8, 2), std::invalid_argument);
  CHECK(dip::parse_blend("cosine") == BlendKind::Cosine);
  CHECK_THROWS_AS(dip::parse_blend("gauss"), std::invalid_argument);
}

TEST_CASE("patchwork of a locally exact method matches the full-image result") {
  const std::size_t n = 58;
  const SamplingPattern pattern{3, 3, 0, 0};
  Tensor<double> ramp({1, 1, n, n});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) ramp[y * n + x] = 0.1 + 0.004 * static_cast<double>(x) + 0.01 * y / 7.0;
  const auto method = dip::InterpMethod::bilinear();
  const auto direct = dip::interpolate(dip::extract_lowres(ramp, pattern), pattern, n, n, method);
  for (BlendKind blend : {BlendKind::Linear, BlendKind::Cosine}) {
    const auto plan = dip::plan_patches(n, n, 22, 4, blend);
    REQUIRE(plan.tiles.size() == 9);
    const auto tiled = dip::patchwork_apply(plan, 1, [&](std::size_t, const dip::PatchTile& t) {
      Tensor<double> crop({1, 1, t.height, t.width});
      for (std::size_t y = 0; y < t.height; ++y)
        for (std::size_t x = 0; x < t.width; ++x) crop[y * t.width + x] = ramp[(t.top + y) * n + t.left + x];
      const SamplingPattern local{3, 3, (3 - t.left % 3) % 3, (3 - t.top % 3) % 3};
      return dip::interpolate(dip::extract_lowres(crop, local), local, t.height, t.width, method);
    });
    double worst = 0.0;
    for (std::size_t i = 0; i < direct.size(); ++i) worst = std::max(worst, std::abs(tiled[i] - direct[i]));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("blended output is a convex combination of covering tiles") {
  const auto plan = dip::plan_patches(40, 40, 16, 6);
  const auto out = dip::patchwork_apply(plan, 1, [](std::size_t i, const dip::PatchTile& t) {
    return Tensor<double>({1, 1, t.height, t.width}, static_cast<double>(i));
  });
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 40; ++x) {
      double lo = 1e9, hi = -1e9;
      for (std::size_t i = 0; i < plan.tiles.size(); ++i) {
        const auto& t = plan.tiles[i];
        if (y < t.top || y >= t.top + t.height || x < t.left || x >= t.left + t.width) continue;
        lo = std::min(lo, static_cast<double>(i));
        hi = std::max(hi, static_cast<double>(i));
      }
      CHECK(out[y * 40 + x] >= lo);
      CHECK(out[y * 40 + x] <= hi);
    }
}

TEST_CASE("skipped tiles are filled from their neighbours") {
  const auto plan = dip::plan_patches(28, 28, 12, 4);
  REQUIRE(plan.tiles.size() == 9);
  std::vector<bool> skip(9, false);
  skip[4] = true;
  std::size_t calls = 0;
  const auto out = dip::patchwork_apply(
      plan, 1,
      [&](std::size_t, const dip::PatchTile& t) {
        ++calls;
        return Tensor<double>({1, 1, t.height, t.width}, 0.25);
      },
      skip);
  CHECK(calls == 8);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK_THROWS_WITH_AS(dip::patchwork_apply(plan, 1,
                                            [](std::size_t i, const dip::PatchTile& t) -> Tensor<double> {
                                              if (i == 3) throw std::runtime_error("boom");
                                              return Tensor<double>({1, 1, t.height, t.width});
                                            }),
                       doctest::Contains("tile 3 at (8, 0): boom"), std::runtime_error);
}

TEST_CASE("single-tile patchwork reproduces direct optimization bit for bit") {
  DeterministicScope det;
  std::mt19937_64 rng(8);
  const auto gt = oracle::random_tensor<double>({1, 1, 24, 20}, rng, 0.0, 1.0);
  const auto mask = dip::build_mask(24, 20, SamplingPattern{2, 3, 0, 0});
  const auto sparse = dip::degrade(gt, mask);
  const auto plan = dip::plan_patches(24, 20, 300, 32);
  const auto net = tiny_net();
  const auto run = short_run(12);
  const auto tiled = dip::patchwork_restore<float>(sparse, mask, net, run, plan);
  const auto direct = dip::dip_optimize(sparse.cast<float>(), mask, net, run);
  REQUIRE(tiled.histories.size() == 1);
  CHECK(tiled.histories[0].masked_mse == direct.history.masked_mse);
  const auto d = direct.restored.cast<double>();
  std::size_t mismatched = 0;
  for (std::size_t i = 0; i < d.size(); ++i) mismatched += tiled.image[i] != d[i];
  CHECK(mismatched == 0);
  CHECK(tiled.flags.empty());
  CHECK(tiled.audit.checks == direct.audit.checks);
  CHECK(tiled.audit.checks > 0);
  CHECK(tiled.audit.ok());
}

TEST_CASE("two-tile restoration of a constant image has no visible seam") {
  DeterministicScope det;
  const std::size_t h = 16, w = 40;
  const Tensor<double> gt({1, 1, h, w}, 0.5);
  const auto mask = dip::build_mask(h, w, SamplingPattern{2, 2, 0, 0});
  const auto plan = dip::plan_patches(h, w, 24, 8);
  REQUIRE(plan.tiles.size() == 2);
  auto net = tiny_net();
  net.skip_channels = 0;
  const auto r = dip::patchwork_restore<float>(dip::degrade(gt, mask), mask, net, short_run(2000), plan);
  double seam = 0.0, err = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 15; x <= 24; ++x) seam = std::max(seam, std::abs(r.image[y * w + x + 1] - r.image[y * w + x]));
    for (std::size_t x = 0; x < w; ++x) err = std::max(err, std::abs(r.image[y * w + x] - 0.5));
  }
  CHECK(seam < 1e-3);
  CHECK(err < 0.05);
}

TEST_CASE("tiles without samples are flagged") {
  DeterministicScope det;
  const std::size_t h = 16, w = 40;
  std::vector<std::uint8_t> bits(h * w, 0);
  for (std::size_t y = 0; y < h; y += 2)
    for (std::size_t x = 0; x < 20; x += 2) bits[y * w + x] = 1;
  const dip::SamplingMask mask(h, w, bits);
  const Tensor<double> gt({1, 1, h, w}, 0.4);
  const auto plan = dip::plan_patches(h, w, 16, 4);
  REQUIRE(plan.tiles.size() == 3);
  const auto r = dip::patchwork_restore<float>(dip::degrade(gt, mask), mask, tiny_net(), short_run(5), plan);
  REQUIRE(r.flags.size() == 1);
  CHECK(r.flags[0].find("tile 2 at (0, 24)") != std::string::npos);
  CHECK(r.histories[2].size() == 0);
  CHECK(r.histories[0].size() == 5);
  const std::vector<std::uint8_t> none(h * w, 0);
  CHECK_THROWS_AS(dip::patchwork_restore<float>(gt, dip::SamplingMask(h, w, none), tiny_net(), short_run(5), plan),
                  std::invalid_argument);
}

TEST_CASE("experiment on a constant image with bilinear scores SSIM one") {
  dip::ExperimentConfig cfg;
  cfg.images.push_back({"flat", {}, Tensor<double>({1, 1, 33, 31}, 0.6)});
  cfg.patterns = {SamplingPattern{3, 2, 0, 0}};
  cfg.methods = {"bilinear"};
  const auto report = dip::run_experiment(cfg);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.rows[0].psnr_db > 200.0);
  CHECK(report.rows[0].pattern == "3x2");
  CHECK(report.failures.empty());
}

TEST_CASE("experiment writes artifacts and records unreadable inputs") {
  DeterministicScope det;
  const auto dir = scratch("artifacts");
  dip::ExperimentConfig cfg;
  dip::SyntheticSpec spec;
  spec.height = 24;
  spec.width = 24;
  cfg.images = dip::synthetic_corpus(2, spec, 3);
  cfg.images.push_back({"absent", dir / "does_not_exist.png", std::nullopt});
  cfg.patterns = {SamplingPattern{2, 2, 0, 0}, SamplingPattern{3, 1, 0, 0}};
  cfg.methods = {"bilinear", "dip", "lanczos"};
  cfg.net = tiny_net();
  cfg.run = short_run(4);
  cfg.output_dir = dir;
  cfg.master_seed = 99;
  const auto report = dip::run_experiment(cfg);
  CHECK(report.rows.size() == 2 * 2 * 3);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].rfind("absent: ", 0) == 0);
  CHECK(report.aggregates.size() == 2 * 3);
  for (const auto& a : report.aggregates) CHECK(a.n == 2);
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(fs::exists(dir / "aggregate.csv"));
  CHECK(fs::exists(dir / "masks" / "2x2.png"));
  CHECK(fs::exists(dir / "masks" / "3x1.png"));
  CHECK(fs::exists(dir / "restored" / "synth_001_3x1_dip.png"));
  CHECK(fs::exists(dir / "restored" / "synth_000_2x2_lanczos.png"));
  CHECK(fs::exists(dir / "loss_synth_000_2x2.csv"));
  CHECK(!fs::exists(dir / "loss_synth_000_2x2_bilinear.csv"));
  CHECK(dip::read_mask_png(dir / "masks" / "3x1.png") == dip::build_mask(24, 24, SamplingPattern{3, 1, 0, 0}));
  const auto loss = slurp(dir / "loss_synth_001_3x1.csv");
  CHECK(loss.rfind("tile,iteration,masked_mse,seconds\n", 0) == 0);
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 5);
  const auto csv = slurp(dir / "report.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);

  const auto again = scratch("artifacts_rerun");
  cfg.output_dir = again;
  cfg.workers = 3;
  dip::run_experiment(cfg);
  CHECK(slurp(again / "report.csv") == csv);
  CHECK(slurp(again / "aggregate.csv") == slurp(dir / "aggregate.csv"));
}

TEST_CASE("experiment validation") {
  dip::ExperimentConfig cfg;
  cfg.images.push_back({"flat", {}, Tensor<double>({1, 1, 8, 8}, 0.6)});
  cfg.patterns = {SamplingPattern{2, 2, 0, 0}};
  CHECK_THROWS_WITH_AS(dip::run_experiment(cfg), doctest::Contains("no methods"), std::invalid_argument);
  cfg.methods = {"nearest"};
  CHECK_THROWS_AS(dip::run_experiment(cfg), std::invalid_argument);
  cfg.methods = {"bicubic"};
  cfg.images.push_back(cfg.images[0]);
  CHECK_THROWS_WITH_AS(dip::run_experiment(cfg), doctest::Contains("duplicate"), std::invalid_argument);
}
