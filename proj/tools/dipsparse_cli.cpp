#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dip/config.hpp"
#include "dip/image_io.hpp"
#include "dip/metrics.hpp"
#include "dip/pipeline.hpp"
#include "dip/random.hpp"

namespace fs = std::filesystem;
using namespace dip;

namespace {

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX,");
  std::size_t h = 0, w = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    std::size_t used = 0;
    h = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("");
    w = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad size '" + text + "' (expected HxW)");
  }
  if (h == 0 || w == 0) throw std::invalid_argument("size must be positive, got '" + text + "'");
  return {h, w};
}

AppConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  AppConfig cfg = path.empty() ? AppConfig{} : load_config(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    try {
      apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("--set ") + kv + ": " + e.what());
    }
  }
  return cfg;
}

// PNG depth for outputs derived from an input of the given format.
ImageFormat output_format(const fs::path& out, ImageFormat input, int bits) {
  ImageFormat png = input == ImageFormat::Png8 ? ImageFormat::Png8 : ImageFormat::Png16;
  if (bits == 8) png = ImageFormat::Png8;
  if (bits == 16) png = ImageFormat::Png16;
  return format_for_path(out, png);
}

void write_loss_csv(const fs::path& path, const std::vector<LossHistory>& histories) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << "tile,iteration,masked_mse,seconds\n";
  for (std::size_t t = 0; t < histories.size(); ++t)
    for (std::size_t k = 0; k < histories[t].size(); ++k) {
      os << t << ',' << k << ',' << format_number(histories[t].masked_mse[k]) << ','
         << format_number(histories[t].seconds[k]) << '\n';
    }
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

struct Options {
  std::string config, in, out, pattern, size, method = "dip", ref, test, mask, snapshots, loss;
  std::vector<std::string> sets, inputs;
  std::optional<std::uint64_t> seed;
  std::optional<double> max_val;
  std::size_t count = 5;
  int bits = 0;
};

int cmd_mask(const Options& o) {
  const auto [h, w] = parse_size(o.size);
  const SamplingMask mask = build_mask(h, w, SamplingPattern::parse(o.pattern));
  write_mask_png(o.out, mask);
  std::cout << "wrote " << o.out << ": " << mask.count() << " of " << h * w << " pixels sampled\n";
  return 0;
}

int cmd_degrade(const Options& o) {
  const LoadedImage img = read_image(o.in);
  const auto pattern = SamplingPattern::parse(o.pattern);
  const SamplingMask mask = build_mask(img.pixels.dim(2), img.pixels.dim(3), pattern);
  write_image(o.out, degrade(img.pixels, mask), output_format(o.out, img.format, o.bits));
  if (!o.mask.empty()) write_mask_png(o.mask, mask);
  return 0;
}

int cmd_restore(const Options& o) {
  AppConfig cfg = resolve_config(o.config, o.sets);
  if (o.seed) cfg.run.seed = *o.seed;
  const LoadedImage img = read_image(o.in);
  const std::size_t h = img.pixels.dim(2), w = img.pixels.dim(3);
  if (o.pattern.empty() && o.mask.empty()) throw std::invalid_argument("restore needs --pattern or --mask");
  const SamplingMask mask = o.mask.empty() ? build_mask(h, w, SamplingPattern::parse(o.pattern)) : read_mask_png(o.mask);
  if (mask.height() != h || mask.width() != w) {
    throw std::invalid_argument("mask is " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                                " but the image is " + std::to_string(h) + "x" + std::to_string(w));
  }
  const Tensor<double> sparse = degrade(img.pixels, mask);
  Tensor<double> restored;
  if (o.method == "dip") {
    if (o.snapshots.empty()) cfg.run.snapshot_every = 0;
    NetworkConfig net = cfg.net;
    net.init_seed = derive_seed(cfg.run.seed, 4);
    const PatchPlan plan = plan_patches(h, w, cfg.tile, cfg.overlap, cfg.blend);
    PatchworkResult r = cfg.precision == Precision::Float ? patchwork_restore<float>(sparse, mask, net, cfg.run, plan)
                                                          : patchwork_restore<double>(sparse, mask, net, cfg.run, plan);
    for (const auto& f : r.flags) std::cerr << "warning: " << f << '\n';
    if (!o.snapshots.empty()) {
      fs::create_directories(o.snapshots);
      for (const auto& s : r.snapshots) {
        char name[64];
        std::snprintf(name, sizeof name, "snapshot_%06zu.png", s.iteration);
        write_png(fs::path(o.snapshots) / name, s.image, 16);
      }
    }
    if (!o.loss.empty()) write_loss_csv(o.loss, r.histories);
    restored = std::move(r.image);
  } else {
    if (o.pattern.empty()) throw std::invalid_argument("interpolation methods need --pattern");
    if (!o.snapshots.empty() || !o.loss.empty()) {
      throw std::invalid_argument("--snapshots and --loss apply to --method dip only");
    }
    const auto pattern = SamplingPattern::parse(o.pattern);
    InterpMethod m = InterpMethod::parse(o.method);
    m.bicubic_a = cfg.bicubic_a;
    m.lanczos_a = cfg.lanczos_a;
    restored = interpolate(extract_lowres(sparse, pattern), pattern, h, w, m);
  }
  write_image(o.out, restored, output_format(o.out, img.format, o.bits));
  return 0;
}

int cmd_eval(const Options& o) {
  const LoadedImage ref = read_image(o.ref);
  const LoadedImage test = read_image(o.test);
  if (ref.pixels.shape() != test.pixels.shape()) {
    throw std::invalid_argument("images differ in size: " + shape_to_string(ref.pixels.shape()) + " vs " +
                                shape_to_string(test.pixels.shape()));
  }
  // Scores are computed on the files' native sample scale.
  double scale = 1.0;
  if (ref.format == test.format && ref.format == ImageFormat::Png8) scale = 255.0;
  if (ref.format == test.format && ref.format == ImageFormat::Png16) scale = 65535.0;
  Tensor<double> a = ref.pixels, b = test.pixels;
  if (scale != 1.0) {
    for (auto& v : a.data()) v = std::round(v * scale);
    for (auto& v : b.data()) v = std::round(v * scale);
  }
  SsimParams params;
  params.dynamic_range = o.max_val.value_or(scale);
  std::cout << "ssim " << format_number(ssim(a, b, params)) << '\n'
            << "psnr " << format_number(psnr(a, b, params.dynamic_range)) << '\n';
  return 0;
}

int cmd_bench(const Options& o) {
  AppConfig cfg = resolve_config(o.config, o.sets);
  if (o.seed) cfg.run.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (cfg.methods.empty()) throw std::invalid_argument("bench.methods is empty");
  if (cfg.patterns.empty()) throw std::invalid_argument("bench.patterns is empty");
  if (cfg.images.empty() && cfg.synthetic_count == 0) {
    throw std::invalid_argument("no inputs: set bench.images or synth.count");
  }
  const ExperimentConfig exp = make_experiment(cfg);
  const MetricsReport report = run_experiment(exp, [](const std::string& line) { std::cerr << line << '\n'; });
  for (const auto& f : report.flags) std::cerr << "warning: " << f << '\n';
  write_aggregate_csv(std::cout, report.aggregates);
  if (!report.failures.empty()) {
    for (const auto& f : report.failures) std::cerr << "failed: " << f << '\n';
    std::cerr << "error: " << report.failures.size() << " job(s) failed; report written to " << cfg.output_dir
              << '\n';
    return 3;
  }
  return 0;
}

int cmd_add(const Options& o) {
  if (o.inputs.size() < 2) throw std::invalid_argument("add needs at least two --in images");
  LoadedImage first = read_image(o.inputs[0]);
  Tensor<double> sum = first.pixels;
  bool deep = first.format != ImageFormat::Png8;
  for (std::size_t i = 1; i < o.inputs.size(); ++i) {
    const LoadedImage next = read_image(o.inputs[i]);
    if (next.pixels.shape() != sum.shape()) {
      throw std::invalid_argument("'" + o.inputs[i] + "' is " + shape_to_string(next.pixels.shape()) + " but '" +
                                  o.inputs[0] + "' is " + shape_to_string(sum.shape()));
    }
    deep = deep || next.format != ImageFormat::Png8;
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += next.pixels[k];
  }
  for (auto& v : sum.data()) v = std::min(v, 1.0);
  write_image(o.out, sum, output_format(o.out, deep ? ImageFormat::Png16 : ImageFormat::Png8, o.bits));
  return 0;
}

int cmd_synth(const Options& o) {
  AppConfig cfg = resolve_config(o.config, o.sets);
  if (!o.size.empty()) std::tie(cfg.synthetic.height, cfg.synthetic.width) = parse_size(o.size);
  const std::uint64_t seed = o.seed.value_or(cfg.run.seed);
  fs::create_directories(o.out);
  for (const auto& img : synthetic_corpus(o.count, cfg.synthetic, seed)) {
    write_png(fs::path(o.out) / (img.name + ".png"), *img.pixels, o.bits == 8 ? 8 : 16);
  }
  return 0;
}

int cmd_config(const Options& o) {
  write_config(std::cout, resolve_config(o.config, o.sets));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Restore sparsely sampled raster-scan images with a deep image prior"};
  app.require_subcommand(1);
  Options o;
  auto config_opts = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value run file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.sets, "override one config key (key=value), repeatable");
  };

  auto* mask = app.add_subcommand("mask", "write the binary sampling mask as a 0/255 PNG");
  mask->add_option("--pattern", o.pattern, "Sx,Sy[,ox,oy]")->required();
  mask->add_option("--size", o.size, "HxW")->required();
  mask->add_option("--out", o.out, "output PNG")->required();

  auto* deg = app.add_subcommand("degrade", "zero every unsampled pixel");
  deg->add_option("--in", o.in, "input image")->required()->check(CLI::ExistingFile);
  deg->add_option("--pattern", o.pattern, "Sx,Sy[,ox,oy]")->required();
  deg->add_option("--out", o.out, "output image")->required();
  deg->add_option("--mask-out", o.mask, "also write the mask PNG here");
  deg->add_option("--bits", o.bits, "PNG bit depth, 8 or 16")->check(CLI::IsMember({8, 16}));

  auto* res = app.add_subcommand("restore", "fill in a sparse image");
  res->add_option("--in", o.in, "sparse image")->required()->check(CLI::ExistingFile);
  res->add_option("--pattern", o.pattern, "Sx,Sy[,ox,oy]");
  res->add_option("--mask", o.mask, "mask PNG, instead of --pattern")->check(CLI::ExistingFile);
  res->add_option("--method", o.method, "dip, bilinear, bicubic or lanczos")
      ->check(CLI::IsMember({"dip", "bilinear", "bicubic", "lanczos"}));
  res->add_option("--seed", o.seed, "master seed");
  res->add_option("--out", o.out, "restored image")->required();
  res->add_option("--snapshots", o.snapshots, "directory for intermediate outputs");
  res->add_option("--loss", o.loss, "CSV of the masked loss per iteration");
  res->add_option("--bits", o.bits, "PNG bit depth, 8 or 16")->check(CLI::IsMember({8, 16}));
  config_opts(res);

  auto* ev = app.add_subcommand("eval", "print SSIM and PSNR of --test against --ref");
  ev->add_option("--ref", o.ref, "reference image")->required()->check(CLI::ExistingFile);
  ev->add_option("--test", o.test, "test image")->required()->check(CLI::ExistingFile);
  ev->add_option("--max", o.max_val, "dynamic range (default: 255 for 8-bit, 65535 for 16-bit, else 1)");

  auto* bench = app.add_subcommand("bench", "run the restoration benchmark described by a config file");
  bench->add_option("--seed", o.seed, "master seed");
  bench->add_option("--out", o.out, "output directory (overrides bench.output_dir)");
  config_opts(bench);
  bench->get_option("--config")->required();

  auto* add = app.add_subcommand("add", "pixelwise sum of images, clamped to 1");
  add->add_option("--in", o.inputs, "input images")->required()->expected(2, -1);
  add->add_option("--out", o.out, "output image")->required();
  add->add_option("--bits", o.bits, "PNG bit depth, 8 or 16")->check(CLI::IsMember({8, 16}));

  auto* synth = app.add_subcommand("synth", "write seeded synthetic vessel images");
  synth->add_option("--count", o.count, "number of images");
  synth->add_option("--size", o.size, "HxW");
  synth->add_option("--seed", o.seed, "master seed");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--bits", o.bits, "PNG bit depth, 8 or 16")->check(CLI::IsMember({8, 16}));
  config_opts(synth);

  auto* cfg = app.add_subcommand("config", "print every config key with its effective value");
  config_opts(cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = e.get_name();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "error: " << msg << '\n';
    return 2;
  }

  try {
    if (*mask) return cmd_mask(o);
    if (*deg) return cmd_degrade(o);
    if (*res) return cmd_restore(o);
    if (*ev) return cmd_eval(o);
    if (*bench) return cmd_bench(o);
    if (*add) return cmd_add(o);
    if (*synth) return cmd_synth(o);
    if (*cfg) return cmd_config(o);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}
