#include "dip/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace dip {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("bad value '" + text + "' for " + key);
  return v;
}

std::string join_paths(const std::vector<std::filesystem::path>& paths) {
  std::string out;
  for (const auto& p : paths) out += (out.empty() ? "" : ",") + p.string();
  return out;
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : sep) + s;
  return out;
}

struct Key {
  std::function<void(AppConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const AppConfig&)> get;
};

template <typename N, typename F>
Key number_key(F field) {
  return {[field](AppConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<N>(k, v); },
          [field](const AppConfig& c) {
            if constexpr (std::is_floating_point_v<N>) {
              return format_number(field(c));
            } else {
              return std::to_string(field(c));
            }
          }};
}

#define DIP_NUM(type, expr) number_key<type>([](auto& c) -> auto& { return expr; })

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = {
      {"net.input_channels", DIP_NUM(std::size_t, c.net.input_channels)},
      {"net.base_filters", DIP_NUM(std::size_t, c.net.base_filters)},
      {"net.kernel_size", DIP_NUM(std::size_t, c.net.kernel_size)},
      {"net.levels", DIP_NUM(std::size_t, c.net.levels)},
      {"net.leaky_alpha", DIP_NUM(double, c.net.leaky_alpha)},
      {"net.output_activation",
       {[](AppConfig& c, const std::string&, const std::string& v) {
          c.net.output_activation = parse_output_activation(v);
        },
        [](const AppConfig& c) { return to_string(c.net.output_activation); }}},
      {"net.downsample",
       {[](AppConfig& c, const std::string&, const std::string& v) { c.net.downsample = parse_downsample(v); },
        [](const AppConfig& c) { return to_string(c.net.downsample); }}},
      {"net.normalization",
       {[](AppConfig& c, const std::string&, const std::string& v) { c.net.normalization = parse_normalization(v); },
        [](const AppConfig& c) { return to_string(c.net.normalization); }}},
      {"net.skip_channels", DIP_NUM(std::size_t, c.net.skip_channels)},
      {"run.iterations", DIP_NUM(std::size_t, c.run.iterations)},
      {"run.sigma_z", DIP_NUM(double, c.run.sigma_z)},
      {"run.snapshot_every", DIP_NUM(std::size_t, c.run.snapshot_every)},
      {"run.seed", DIP_NUM(std::uint64_t, c.run.seed)},
      {"run.z0_max", DIP_NUM(double, c.run.z0_max)},
      {"run.audit_every", DIP_NUM(std::size_t, c.run.audit_every)},
      {"run.audit_samples", DIP_NUM(std::size_t, c.run.audit_samples)},
      {"run.precision",
       {[](AppConfig& c, const std::string& k, const std::string& v) {
          if (v == "float") {
            c.precision = Precision::Float;
          } else if (v == "double") {
            c.precision = Precision::Double;
          } else {
            throw std::invalid_argument("bad value '" + v + "' for " + k + " (expected float or double)");
          }
        },
        [](const AppConfig& c) { return std::string(c.precision == Precision::Float ? "float" : "double"); }}},
      {"opt.learning_rate", DIP_NUM(double, c.run.optimizer.learning_rate)},
      {"opt.beta1", DIP_NUM(double, c.run.optimizer.beta1)},
      {"opt.beta2", DIP_NUM(double, c.run.optimizer.beta2)},
      {"opt.eps", DIP_NUM(double, c.run.optimizer.eps)},
      {"opt.clip_value", DIP_NUM(double, c.run.optimizer.clip_value)},
      {"interp.bicubic_a", DIP_NUM(double, c.bicubic_a)},
      {"interp.lanczos_a", DIP_NUM(int, c.lanczos_a)},
      {"patch.tile", DIP_NUM(std::size_t, c.tile)},
      {"patch.overlap", DIP_NUM(std::size_t, c.overlap)},
      {"patch.blend",
       {[](AppConfig& c, const std::string&, const std::string& v) { c.blend = parse_blend(v); },
        [](const AppConfig& c) { return to_string(c.blend); }}},
      {"ssim.window", DIP_NUM(std::size_t, c.ssim.window)},
      {"ssim.sigma", DIP_NUM(double, c.ssim.sigma)},
      {"ssim.k1", DIP_NUM(double, c.ssim.k1)},
      {"ssim.k2", DIP_NUM(double, c.ssim.k2)},
      {"ssim.dynamic_range", DIP_NUM(double, c.ssim.dynamic_range)},
      {"synth.count", DIP_NUM(std::size_t, c.synthetic_count)},
      {"synth.height", DIP_NUM(std::size_t, c.synthetic.height)},
      {"synth.width", DIP_NUM(std::size_t, c.synthetic.width)},
      {"synth.trunks", DIP_NUM(std::size_t, c.synthetic.trunks)},
      {"synth.branches", DIP_NUM(std::size_t, c.synthetic.branches)},
      {"synth.min_width", DIP_NUM(double, c.synthetic.min_width)},
      {"synth.max_width", DIP_NUM(double, c.synthetic.max_width)},
      {"synth.background", DIP_NUM(double, c.synthetic.background)},
      {"synth.curvature", DIP_NUM(double, c.synthetic.curvature)},
      {"bench.images",
       {[](AppConfig& c, const std::string&, const std::string& v) {
          c.images.clear();
          for (const auto& p : split(v, ',')) c.images.emplace_back(p);
        },
        [](const AppConfig& c) { return join_paths(c.images); }}},
      {"bench.patterns",
       {[](AppConfig& c, const std::string&, const std::string& v) {
          if (v.empty()) {
            c.patterns.clear();
          } else {
            c.patterns = parse_pattern_list(v);
          }
        },
        [](const AppConfig& c) {
          std::vector<std::string> parts;
          for (const auto& p : c.patterns) {
            std::string s = std::to_string(p.sx) + "," + std::to_string(p.sy);
            if (p.offset_x || p.offset_y) s += "," + std::to_string(p.offset_x) + "," + std::to_string(p.offset_y);
            parts.push_back(s);
          }
          return join(parts, ";");
        }}},
      {"bench.methods",
       {[](AppConfig& c, const std::string& k, const std::string& v) {
          c.methods = split(v, ',');
          for (const auto& m : c.methods) {
            if (m != "dip" && m != "bilinear" && m != "bicubic" && m != "lanczos") {
              throw std::invalid_argument("unknown method '" + m + "' in " + k);
            }
          }
        },
        [](const AppConfig& c) { return join(c.methods, ","); }}},
      {"bench.output_dir",
       {[](AppConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
        [](const AppConfig& c) { return c.output_dir.string(); }}},
      {"bench.workers", DIP_NUM(std::size_t, c.workers)},
  };
  return table;
}

#undef DIP_NUM

}  // namespace

std::vector<SamplingPattern> parse_pattern_list(const std::string& text) {
  if (trim(text) == "presets") return preset_patterns();
  std::vector<SamplingPattern> out;
  for (const auto& item : split(text, ';')) out.push_back(SamplingPattern::parse(item));
  if (out.empty()) throw std::invalid_argument("empty pattern list");
  return out;
}

void apply_setting(AppConfig& config, const std::string& key, const std::string& value) {
  const auto& table = keys();
  const auto it = table.find(key);
  if (it == table.end()) throw std::invalid_argument("unknown key '" + key + "'");
  it->second.set(config, key, value);
}

AppConfig parse_config(std::istream& is, const std::string& source, const std::filesystem::path& base_dir) {
  AppConfig config;
  std::string line;
  for (std::size_t number = 1; std::getline(is, line); ++number) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_setting(config, key, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  for (auto& p : config.images) {
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  }
  return config;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path.string() + "'");
  return parse_config(is, path.string(), path.parent_path());
}

void write_config(std::ostream& os, const AppConfig& config) {
  for (const auto& [key, k] : keys()) os << key << " = " << k.get(config) << '\n';
}

ExperimentConfig make_experiment(const AppConfig& config) {
  ExperimentConfig e;
  for (const auto& p : config.images) e.images.push_back({p.stem().string(), p, std::nullopt});
  for (auto& img : synthetic_corpus(config.synthetic_count, config.synthetic, config.run.seed)) {
    e.images.push_back(std::move(img));
  }
  e.patterns = config.patterns;
  e.methods = config.methods;
  e.net = config.net;
  e.run = config.run;
  e.precision = config.precision;
  e.bicubic_a = config.bicubic_a;
  e.lanczos_a = config.lanczos_a;
  e.tile = config.tile;
  e.overlap = config.overlap;
  e.blend = config.blend;
  e.output_dir = config.output_dir;
  e.master_seed = config.run.seed;
  e.workers = config.workers;
  e.ssim = config.ssim;
  return e;
}

}  // namespace dip
