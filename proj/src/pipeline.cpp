#include "dip/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dip/image_io.hpp"
#include "dip/random.hpp"

namespace dip {

namespace {

constexpr double kWeightQuantum = 0x1.0p-20;

// Runs fn(i) for i in [0, count) on up to `workers` threads. Exceptions are
// captured per index and returned in index order.
std::vector<std::exception_ptr> run_pool(std::size_t count, std::size_t workers,
                                         const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) guarded(i);
    return errors;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) guarded(i);
    });
  }
  for (auto& t : pool) t.join();
  return errors;
}

std::string what(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

std::vector<std::size_t> axis_starts(std::size_t n, std::size_t tile, std::size_t overlap) {
  if (n <= tile) return {0};
  std::vector<std::size_t> starts{0};
  while (starts.back() + tile < n) starts.push_back(std::min(starts.back() + tile - overlap, n - tile));
  return starts;
}

// Per-tile weights along one axis that sum to exactly one at every position.
std::vector<std::vector<double>> axis_weights(std::size_t n, const std::vector<std::size_t>& starts,
                                              std::size_t extent, BlendKind blend) {
  std::vector<std::vector<double>> w(starts.size(), std::vector<double>(extent, 0.0));
  std::vector<std::size_t> cover;
  std::vector<double> raw;
  for (std::size_t p = 0; p < n; ++p) {
    cover.clear();
    raw.clear();
    for (std::size_t i = 0; i < starts.size(); ++i) {
      if (p < starts[i] || p >= starts[i] + extent) continue;
      const double pc = static_cast<double>(p) + 0.5;
      const double lo = starts[i] > 0 ? pc - static_cast<double>(starts[i]) : INFINITY;
      const double hi = starts[i] + extent < n ? static_cast<double>(starts[i] + extent) - pc : INFINITY;
      cover.push_back(i);
      raw.push_back(std::min(lo, hi));
    }
    if (cover.size() == 1) {
      w[cover[0]][p - starts[cover[0]]] = 1.0;
      continue;
    }
    double total = 0.0;
    for (double r : raw) total += r;
    for (double& r : raw) r /= total;
    if (blend == BlendKind::Cosine && cover.size() == 2) {
      const double s = std::sin(0.5 * std::numbers::pi * raw[1]);
      raw[1] = s * s;
      raw[0] = 1.0 - raw[1];
    }
    const std::size_t keep = static_cast<std::size_t>(std::max_element(raw.begin(), raw.end()) - raw.begin());
    double assigned = 0.0;
    for (std::size_t k = 0; k < cover.size(); ++k) {
      if (k == keep) continue;
      raw[k] = std::round(raw[k] / kWeightQuantum) * kWeightQuantum;
      assigned += raw[k];
    }
    raw[keep] = 1.0 - assigned;
    for (std::size_t k = 0; k < cover.size(); ++k) w[cover[k]][p - starts[cover[k]]] = raw[k];
  }
  return w;
}

double plane_mean(const Tensor<double>& t, std::size_t c) {
  const std::size_t plane = t.dim(2) * t.dim(3);
  double s = 0.0;
  for (std::size_t i = 0; i < plane; ++i) s += t[c * plane + i];
  return s / static_cast<double>(plane);
}

Tensor<double> crop_image(const Tensor<double>& img, const PatchTile& t) {
  const std::size_t c = img.dim(1), w = img.dim(3);
  Tensor<double> out({1, c, t.height, t.width});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < t.height; ++y)
      for (std::size_t x = 0; x < t.width; ++x)
        out[(ch * t.height + y) * t.width + x] = img[(ch * img.dim(2) + t.top + y) * w + t.left + x];
  return out;
}

void clamp_unit(Tensor<double>& t) {
  for (auto& v : t.data()) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
}

}  // namespace

std::string to_string(BlendKind kind) { return kind == BlendKind::Linear ? "linear" : "cosine"; }

BlendKind parse_blend(const std::string& name) {
  if (name == "linear") return BlendKind::Linear;
  if (name == "cosine") return BlendKind::Cosine;
  throw std::invalid_argument("unknown blend '" + name + "' (expected linear or cosine)");
}

Tensor<double> PatchTile::weight_map() const {
  Tensor<double> m({1, 1, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) m[y * width + x] = weight(y, x);
  return m;
}

Tensor<double> PatchPlan::weight_sum() const {
  Tensor<double> s({1, 1, height, width});
  for (const auto& t : tiles)
    for (std::size_t y = 0; y < t.height; ++y)
      for (std::size_t x = 0; x < t.width; ++x) s[(t.top + y) * width + t.left + x] += t.weight(y, x);
  return s;
}

PatchPlan plan_patches(std::size_t height, std::size_t width, std::size_t tile, std::size_t overlap, BlendKind blend) {
  if (height == 0 || width == 0) throw std::invalid_argument("plan_patches: image extents must be positive");
  if (tile == 0 || overlap >= tile) {
    throw std::invalid_argument("plan_patches: need tile > overlap >= 0, got tile " + std::to_string(tile) +
                                " and overlap " + std::to_string(overlap));
  }
  PatchPlan plan;
  plan.height = height;
  plan.width = width;
  plan.tile = tile;
  plan.overlap = overlap;
  plan.blend = blend;
  const auto rows = axis_starts(height, tile, overlap);
  const auto cols = axis_starts(width, tile, overlap);
  const std::size_t th = std::min(tile, height), tw = std::min(tile, width);
  const auto rw = axis_weights(height, rows, th, blend);
  const auto cw = axis_weights(width, cols, tw, blend);
  plan.grid_rows = rows.size();
  plan.grid_cols = cols.size();
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) {
      plan.tiles.push_back({rows[r], cols[c], th, tw, r, c, rw[r], cw[c]});
    }
  return plan;
}

Tensor<double> patchwork_apply(const PatchPlan& plan, std::size_t channels, const TileFunction& fn,
                               const std::vector<bool>& skip, std::size_t workers) {
  const std::size_t n = plan.tiles.size();
  if (!skip.empty() && skip.size() != n) throw std::invalid_argument("patchwork_apply: skip list does not match plan");
  auto skipped = [&](std::size_t i) { return !skip.empty() && skip[i]; };
  std::vector<Tensor<double>> outputs(n);
  const auto errors = run_pool(n, workers, [&](std::size_t i) {
    if (skipped(i)) return;
    const PatchTile& t = plan.tiles[i];
    Tensor<double> out = fn(i, t);
    if (out.shape() != Shape{1, channels, t.height, t.width}) {
      throw std::runtime_error("tile output has shape " + shape_to_string(out.shape()));
    }
    outputs[i] = std::move(out);
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) {
      const PatchTile& t = plan.tiles[i];
      throw std::runtime_error("tile " + std::to_string(i) + " at (" + std::to_string(t.top) + ", " +
                               std::to_string(t.left) + "): " + what(errors[i]));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!skipped(i)) continue;
    const PatchTile& t = plan.tiles[i];
    std::vector<std::size_t> donors;
    for (std::size_t j = 0; j < n; ++j) {
      const PatchTile& o = plan.tiles[j];
      const auto dr = static_cast<long>(o.grid_row) - static_cast<long>(t.grid_row);
      const auto dc = static_cast<long>(o.grid_col) - static_cast<long>(t.grid_col);
      if (!skipped(j) && std::abs(dr) <= 1 && std::abs(dc) <= 1) donors.push_back(j);
    }
    if (donors.empty()) {
      for (std::size_t j = 0; j < n; ++j)
        if (!skipped(j)) donors.push_back(j);
    }
    Tensor<double> fill({1, channels, t.height, t.width});
    const std::size_t plane = t.height * t.width;
    for (std::size_t c = 0; c < channels; ++c) {
      double v = 0.0;
      for (std::size_t j : donors) v += plane_mean(outputs[j], c);
      if (!donors.empty()) v /= static_cast<double>(donors.size());
      std::fill(fill.raw() + c * plane, fill.raw() + (c + 1) * plane, v);
    }
    outputs[i] = std::move(fill);
  }
  Tensor<double> out({1, channels, plan.height, plan.width});
  for (std::size_t i = 0; i < n; ++i) {
    const PatchTile& t = plan.tiles[i];
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < t.height; ++y)
        for (std::size_t x = 0; x < t.width; ++x) {
          out[(c * plan.height + t.top + y) * plan.width + t.left + x] +=
              t.weight(y, x) * outputs[i][(c * t.height + y) * t.width + x];
        }
  }
  return out;
}

template <typename T>
PatchworkResult patchwork_restore(const Tensor<double>& sparse, const SamplingMask& mask,
                                  const NetworkConfig& net_config, const DipRunConfig& run_config,
                                  const PatchPlan& plan, std::size_t workers) {
  if (sparse.rank() != 4 || sparse.dim(0) != 1 || sparse.dim(2) != plan.height || sparse.dim(3) != plan.width) {
    throw std::invalid_argument("patchwork_restore: sparse image " + shape_to_string(sparse.shape()) +
                                " does not match a " + std::to_string(plan.height) + "x" + std::to_string(plan.width) +
                                " plan");
  }
  if (mask.height() != plan.height || mask.width() != plan.width) {
    throw std::invalid_argument("patchwork_restore: mask extents do not match the plan");
  }
  PatchworkResult result;
  const std::size_t n = plan.tiles.size();
  result.histories.resize(n);
  std::vector<bool> skip(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const PatchTile& t = plan.tiles[i];
    if (mask.crop(t.top, t.left, t.height, t.width).count() == 0) {
      skip[i] = true;
      result.flags.push_back("tile " + std::to_string(i) + " at (" + std::to_string(t.top) + ", " +
                             std::to_string(t.left) + ") has no sampled pixels; filled from neighbours");
    }
  }
  if (std::all_of(skip.begin(), skip.end(), [](bool s) { return s; })) {
    throw std::invalid_argument("patchwork_restore: the mask has no sampled pixels");
  }
  std::vector<std::vector<Snapshot<T>>> snapshots(n);
  std::vector<VmaxAudit> audits(n);
  result.image = patchwork_apply(
      plan, sparse.dim(1),
      [&](std::size_t i, const PatchTile& t) {
        NetworkConfig nc = net_config;
        nc.init_seed = indexed_seed(net_config.init_seed, i);
        DipRunConfig rc = run_config;
        rc.seed = indexed_seed(run_config.seed, i);
        auto r = dip_optimize(crop_image(sparse, t).cast<T>(), mask.crop(t.top, t.left, t.height, t.width), nc, rc);
        result.histories[i] = std::move(r.history);
        snapshots[i] = std::move(r.snapshots);
        audits[i] = r.audit;
        return r.restored.template cast<double>();
      },
      skip, workers);
  for (std::size_t i = 0; i < n; ++i) {
    result.audit.checks += audits[i].checks;
    result.audit.violations += audits[i].violations;
    if (!audits[i].ok()) {
      result.flags.push_back("tile " + std::to_string(i) + ": v_max decreased at " +
                             std::to_string(audits[i].violations) + " of " + std::to_string(audits[i].checks) +
                             " audit checks");
    }
  }
  std::size_t first = 0;
  while (skip[first]) ++first;
  for (std::size_t k = 0; k < snapshots[first].size(); ++k) {
    Tensor<double> blended = patchwork_apply(
        plan, sparse.dim(1), [&](std::size_t i, const PatchTile&) { return snapshots[i][k].image.template cast<double>(); },
        skip);
    result.snapshots.push_back({snapshots[first][k].iteration, std::move(blended)});
  }
  return result;
}

template PatchworkResult patchwork_restore<float>(const Tensor<double>&, const SamplingMask&, const NetworkConfig&,
                                                  const DipRunConfig&, const PatchPlan&, std::size_t);
template PatchworkResult patchwork_restore<double>(const Tensor<double>&, const SamplingMask&, const NetworkConfig&,
                                                   const DipRunConfig&, const PatchPlan&, std::size_t);

void ExperimentConfig::validate() const {
  if (images.empty()) throw std::invalid_argument("experiment has no images");
  if (patterns.empty()) throw std::invalid_argument("experiment has no sampling patterns");
  if (methods.empty()) throw std::invalid_argument("experiment has no methods");
  for (const auto& p : patterns) p.validate();
  for (const auto& m : methods) {
    if (m != "dip") InterpMethod::parse(m);
  }
  std::map<std::string, int> seen;
  for (const auto& img : images) {
    if (img.name.empty()) throw std::invalid_argument("experiment image without a name");
    if (++seen[img.name] > 1) throw std::invalid_argument("duplicate image name '" + img.name + "'");
  }
  if (tile == 0 || overlap >= tile) throw std::invalid_argument("need tile > overlap >= 0");
  net.validate();
  run.validate();
  ssim.validate();
}

std::vector<ImageInput> synthetic_corpus(std::size_t count, const SyntheticSpec& spec, std::uint64_t seed) {
  std::vector<ImageInput> out;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03zu", i);
    out.push_back({name, {}, synthetic_vessels(spec, indexed_seed(seed, i))});
  }
  return out;
}

MetricsReport run_experiment(const ExperimentConfig& config, const ExperimentLog& log) {
  config.validate();
  const bool write = !config.output_dir.empty();
  if (write) {
    std::filesystem::create_directories(config.output_dir / "restored");
    std::filesystem::create_directories(config.output_dir / "masks");
  }
  std::vector<std::string> failures;
  std::vector<std::string> flags;

  struct Loaded {
    std::size_t index;
    std::string name;
    Tensor<double> pixels;
  };
  std::vector<Loaded> images;
  for (std::size_t i = 0; i < config.images.size(); ++i) {
    const ImageInput& in = config.images[i];
    try {
      Tensor<double> px = in.pixels ? *in.pixels : read_image(in.path).pixels;
      if (px.rank() != 4 || px.dim(0) != 1 || px.dim(1) != 1) {
        throw std::invalid_argument("expected a single-channel image, got " + shape_to_string(px.shape()));
      }
      clamp_unit(px);
      images.push_back({i, in.name, std::move(px)});
    } catch (const std::exception& e) {
      failures.push_back(in.name + ": " + e.what());
    }
  }

  std::map<std::string, std::pair<std::size_t, std::size_t>> mask_extent;
  if (write) {
    for (const auto& img : images)
      for (const auto& p : config.patterns) {
        const std::size_t h = img.pixels.dim(2), w = img.pixels.dim(3);
        const std::string label = p.label();
        auto [it, fresh] = mask_extent.try_emplace(label, h, w);
        std::string file = label + ".png";
        if (!fresh && it->second != std::pair{h, w}) {
          file = label + "_" + std::to_string(h) + "x" + std::to_string(w) + ".png";
        } else if (!fresh) {
          continue;
        }
        write_mask_png(config.output_dir / "masks" / file, build_mask(h, w, p));
      }
  }

  struct Job {
    std::size_t image, pattern, method;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t p = 0; p < config.patterns.size(); ++p)
      for (std::size_t m = 0; m < config.methods.size(); ++m) jobs.push_back({i, p, m});

  std::vector<std::optional<MetricRow>> rows(jobs.size());
  std::vector<std::vector<std::string>> job_flags(jobs.size());
  std::mutex log_mutex;
  const std::size_t workers = config.workers ? config.workers : Runtime::get().worker_threads;

  const auto errors = run_pool(jobs.size(), workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    const Loaded& img = images[job.image];
    const SamplingPattern& pattern = config.patterns[job.pattern];
    const std::string& method = config.methods[job.method];
    const std::size_t h = img.pixels.dim(2), w = img.pixels.dim(3);
    const SamplingMask mask = build_mask(h, w, pattern);
    const Tensor<double> sparse = degrade(img.pixels, mask);
    const std::string stem = img.name + "_" + pattern.label();
    Tensor<double> restored;
    std::string note;
    if (method == "dip") {
      const std::uint64_t seed = derive_seed(config.master_seed, (std::uint64_t{img.index} << 32) | job.pattern);
      NetworkConfig nc = config.net;
      nc.init_seed = derive_seed(seed, 4);
      DipRunConfig rc = config.run;
      rc.seed = seed;
      rc.snapshot_every = 0;
      const PatchPlan plan = plan_patches(h, w, config.tile, config.overlap, config.blend);
      PatchworkResult r = config.precision == Precision::Float
                              ? patchwork_restore<float>(sparse, mask, nc, rc, plan)
                              : patchwork_restore<double>(sparse, mask, nc, rc, plan);
      for (auto& f : r.flags) job_flags[j].push_back(stem + ": " + f);
      note = ", v_max audit " + std::to_string(r.audit.violations) + "/" + std::to_string(r.audit.checks);
      restored = std::move(r.image);
      if (write) {
        std::ofstream os(config.output_dir / ("loss_" + stem + ".csv"));
        os << "tile,iteration,masked_mse,seconds\n";
        for (std::size_t t = 0; t < r.histories.size(); ++t)
          for (std::size_t k = 0; k < r.histories[t].size(); ++k) {
            os << t << ',' << k << ',' << format_number(r.histories[t].masked_mse[k]) << ','
               << format_number(r.histories[t].seconds[k]) << '\n';
          }
        if (!os) throw std::runtime_error("failed writing loss_" + stem + ".csv");
      }
    } else {
      InterpMethod im = InterpMethod::parse(method);
      im.bicubic_a = config.bicubic_a;
      im.lanczos_a = config.lanczos_a;
      restored = interpolate(extract_lowres(sparse, pattern), pattern, h, w, im);
    }
    clamp_unit(restored);
    if (write) write_png(config.output_dir / "restored" / (stem + "_" + method + ".png"), restored, 16);
    MetricRow row{img.name, pattern.label(), method, ssim(img.pixels, restored, config.ssim),
                  psnr(img.pixels, restored, config.ssim.dynamic_range)};
    if (log) {
      std::lock_guard lock(log_mutex);
      log(img.name + " " + row.pattern + " " + method + ": ssim " + format_number(row.ssim) + ", psnr " +
          format_number(row.psnr_db) + " dB" + note);
    }
    rows[j] = std::move(row);
  });

  std::vector<MetricRow> done;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (errors[j]) {
      failures.push_back(images[jobs[j].image].name + " " + config.patterns[jobs[j].pattern].label() + " " +
                         config.methods[jobs[j].method] + ": " + what(errors[j]));
      continue;
    }
    done.push_back(std::move(*rows[j]));
    for (auto& f : job_flags[j]) flags.push_back(std::move(f));
  }
  MetricsReport report = aggregate(done);
  report.failures = std::move(failures);
  report.flags = std::move(flags);
  if (write) {
    std::ofstream rep(config.output_dir / "report.csv");
    write_report_csv(rep, report.rows);
    std::ofstream agg(config.output_dir / "aggregate.csv");
    write_aggregate_csv(agg, report.aggregates);
    if (!rep || !agg) throw std::runtime_error("failed writing the report in " + config.output_dir.string());
  }
  return report;
}

}  // namespace dip
