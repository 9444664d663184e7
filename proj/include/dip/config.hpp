#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dip/pipeline.hpp"

namespace dip {

// Everything a `key = value` run file can set. Keys are grouped by prefix:
// net., run., opt., interp., patch., ssim., synth. and bench.
struct AppConfig {
  NetworkConfig net;
  DipRunConfig run;
  double bicubic_a = -0.5;
  int lanczos_a = 4;
  std::size_t tile = 300;
  std::size_t overlap = 32;
  BlendKind blend = BlendKind::Linear;
  SsimParams ssim;
  Precision precision = Precision::Float;

  // bench only
  std::vector<std::filesystem::path> images;
  std::size_t synthetic_count = 0;
  SyntheticSpec synthetic;
  std::vector<SamplingPattern> patterns;
  std::vector<std::string> methods;
  std::filesystem::path output_dir = "bench_out";
  std::size_t workers = 0;
};

// Sets one key; throws std::invalid_argument for unknown keys or bad values.
void apply_setting(AppConfig& config, const std::string& key, const std::string& value);

// Lines are `key = value`; blank lines and text after '#' are ignored. Errors
// carry "<source>:<line>: ". Relative bench.images paths resolve against
// base_dir; bench.output_dir is taken as given.
AppConfig parse_config(std::istream& is, const std::string& source = "<config>",
                       const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

// Every key with its current value, in a form parse_config accepts.
void write_config(std::ostream& os, const AppConfig& config);

// "7,3;10,5" or "presets" for the six standard patterns.
std::vector<SamplingPattern> parse_pattern_list(const std::string& text);

// The master seed is run.seed.
ExperimentConfig make_experiment(const AppConfig& config);

}  // namespace dip
