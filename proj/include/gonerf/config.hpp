#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "gonerf/errors.hpp"
#include "gonerf/object_field.hpp"
#include "gonerf/objectives.hpp"

namespace gonerf {

struct TrainConfig {
  long total_steps = 20000;
  double bg_augment_fraction = 0.30;
  bool augmentation = true;
  int K = 96;
  int K_render = 192;
  bool stratified = true;
  double lr_tables = 1e-2;
  double lr_decoder = 1e-3;
  double lr_final_ratio = 0.1;
  std::uint64_t seed = 0;
  LossWeights weights;

  std::string prompt = "an object";
  std::string provider = "stub";
  std::string provider_endpoint = "http://127.0.0.1:7860";
  double provider_timeout_s = 60.0;
  double provider_eta = 1.0;
  int native_resolution = 512;
  double guidance_scale = 7.5;
  double crop_margin = 1.2;
  bool random_crop = true;

  long checkpoint_every = 1000;
  long preview_every = 500;
  int preview_views = 2;

  ObjectFieldConfig field;

  void validate() const {
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (!(bg_augment_fraction >= 0.0 && bg_augment_fraction <= 1.0))
      throw ConfigError("bg_augment_fraction must lie in [0,1]");
    if (K < 1 || K_render < 1) throw ConfigError("K and K_render must be >= 1");
    if (lr_tables < 0 || lr_decoder < 0) throw ConfigError("learning rates must be non-negative");
    if (!(lr_final_ratio >= 0.0 && lr_final_ratio <= 1.0)) throw ConfigError("lr_final_ratio must lie in [0,1]");
    if (prompt.empty()) throw ConfigError("prompt must be non-empty");
    if (native_resolution < 8) throw ConfigError("native_resolution must be >= 8");
    if (crop_margin < 1.0) throw ConfigError("crop_margin must be >= 1");
    if (checkpoint_every < 1 || preview_every < 1) throw ConfigError("cadences must be >= 1");
    weights.validate();
    try {
      field.grid.validate();
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace config {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// `key = value` lines; `#` starts a comment; blank lines ignored.
inline KeyValues parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define GONERF_NUM(name, expr)                                                                        \
  {name, {[](TrainConfig& c, const std::string& k, const std::string& v) { expr = to_double(k, v); }, \
          [](const TrainConfig& c) { return fmt(expr); }}}
#define GONERF_INT(name, expr, type)                                                                              \
  {name, {[](TrainConfig& c, const std::string& k, const std::string& v) { expr = static_cast<type>(to_long(k, v)); }, \
          [](const TrainConfig& c) { return std::to_string(expr); }}}
#define GONERF_BOOL(name, expr)                                                                     \
  {name, {[](TrainConfig& c, const std::string& k, const std::string& v) { expr = to_bool(k, v); }, \
          [](const TrainConfig& c) { return std::string(expr ? "true" : "false"); }}}
#define GONERF_STR(name, expr)                                                                           \
  {name, {[](TrainConfig& c, const std::string&, const std::string& v) { expr = v; }, \
          [](const TrainConfig& c) { return expr; }}}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      GONERF_INT("total_steps", c.total_steps, long),
      GONERF_NUM("bg_augment_fraction", c.bg_augment_fraction),
      GONERF_BOOL("augmentation", c.augmentation),
      GONERF_INT("K", c.K, int),
      GONERF_INT("K_render", c.K_render, int),
      GONERF_BOOL("stratified", c.stratified),
      GONERF_NUM("lr_tables", c.lr_tables),
      GONERF_NUM("lr_decoder", c.lr_decoder),
      GONERF_NUM("lr_final_ratio", c.lr_final_ratio),
      GONERF_INT("seed", c.seed, std::uint64_t),
      GONERF_NUM("lambda_start", c.weights.lambda_start),
      GONERF_NUM("lambda_end", c.weights.lambda_end),
      GONERF_NUM("lambda_R", c.weights.lambda_R),
      GONERF_NUM("sds_weight", c.weights.sds),
      GONERF_BOOL("sparsity", c.weights.sparsity),
      GONERF_BOOL("entropy", c.weights.entropy),
      {"reference_mode",
       {[](TrainConfig& c, const std::string&, const std::string& v) {
          try {
            c.weights.reference_mode = parse_reference_mode(v);
          } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
          }
        },
        [](const TrainConfig& c) { return to_string(c.weights.reference_mode); }}},
      GONERF_NUM("shadow_threshold", c.weights.shadow_threshold),
      GONERF_NUM("support_threshold", c.weights.support_threshold),
      GONERF_STR("prompt", c.prompt),
      GONERF_STR("provider", c.provider),
      GONERF_STR("provider_endpoint", c.provider_endpoint),
      GONERF_NUM("provider_timeout_s", c.provider_timeout_s),
      GONERF_NUM("provider_eta", c.provider_eta),
      GONERF_INT("native_resolution", c.native_resolution, int),
      GONERF_NUM("guidance_scale", c.guidance_scale),
      GONERF_NUM("crop_margin", c.crop_margin),
      GONERF_BOOL("random_crop", c.random_crop),
      GONERF_INT("checkpoint_every", c.checkpoint_every, long),
      GONERF_INT("preview_every", c.preview_every, long),
      GONERF_INT("preview_views", c.preview_views, int),
      GONERF_INT("grid.num_levels", c.field.grid.num_levels, int),
      GONERF_INT("grid.base_resolution", c.field.grid.base_resolution, int),
      GONERF_NUM("grid.per_level_scale", c.field.grid.per_level_scale),
      GONERF_INT("grid.features_per_level", c.field.grid.features_per_level, int),
      GONERF_INT("grid.table_size_log2", c.field.grid.table_size_log2, int),
      GONERF_INT("field.hidden_width", c.field.hidden_width, int),
      GONERF_NUM("field.density_shift", c.field.density_shift),
  };
  return f;
}

#undef GONERF_NUM
#undef GONERF_INT
#undef GONERF_BOOL
#undef GONERF_STR

}  // namespace detail

inline void apply_values(TrainConfig& cfg, const KeyValues& kv) {
  const auto& f = detail::fields();
  for (const auto& [k, v] : kv) {
    const auto it = f.find(k);
    if (it == f.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second.set(cfg, k, v);
  }
}

// Resolved configuration in the same key = value form, sorted by key.
inline std::string to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

inline TrainConfig load(const std::filesystem::path& path) {
  TrainConfig cfg;
  apply_values(cfg, parse_file(path));
  return cfg;
}

}  // namespace config
}  // namespace gonerf
