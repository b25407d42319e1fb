#pragma once

// Flat key=value run configuration: one merged record for model, preprocessing,
// sampling, voting and training, with file and command-line overrides.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ctpvt/error.hpp"
#include "ctpvt/preprocess.hpp"
#include "ctpvt/pvt_config.hpp"
#include "ctpvt/sampling.hpp"
#include "ctpvt/train.hpp"

namespace ctpvt {

struct RunConfig {
  PvtConfig model;
  Enhancement enhancement = Enhancement::histogram_equalization;
  double sigma_fraction = kDefaultSigmaFraction;
  VotingConfig voting;
  TrainConfig train;
  std::uint64_t seed = 0;

  PreprocessSpec preprocess() const {
    PreprocessSpec spec;
    spec.enhancement = enhancement;
    spec.resolution = model.input_resolution;
    spec.channels = model.input_channels;
    return spec;
  }

  /// Training settings with the shared seed and sampler spread folded in.
  TrainConfig resolved_train() const {
    TrainConfig t = train;
    t.seed = seed;
    t.sigma_fraction = sigma_fraction;
    return t;
  }

  void validate() const {
    model.validate();
    voting.validate();
    train.validate();
    if (!(sigma_fraction >= 0.0) || !std::isfinite(sigma_fraction)) {
      throw config_error("sampler.sigma_fraction must be finite and non-negative");
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [end, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || end != last) throw config_error("invalid value for " + key + ": '" + text + "'");
  return value;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline StageArray parse_stage_array(const std::string& key, const std::string& text) {
  StageArray out{};
  std::size_t i = 0;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (i == kStages) throw config_error(key + " needs exactly 4 comma-separated values");
    out[i++] = parse_number<std::size_t>(key, trim(item));
  }
  if (i != kStages) throw config_error(key + " needs exactly 4 comma-separated values");
  return out;
}

inline std::string format_stage_array(const StageArray& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," + std::to_string(a[3]);
}

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline ConfigKey stage_key(std::string name, StageArray PvtConfig::*field) {
  return {name, [name, field](RunConfig& c, const std::string& v) { c.model.*field = parse_stage_array(name, v); },
          [field](const RunConfig& c) { return format_stage_array(c.model.*field); }};
}

inline ConfigKey size_key(std::string name, std::function<std::size_t&(RunConfig&)> ref) {
  return {name, [name, ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<std::size_t>(name, v); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

inline ConfigKey real_key(std::string name, std::function<double&(RunConfig&)> ref) {
  return {name, [name, ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<double>(name, v); },
          [ref](const RunConfig& c) { return format_double(ref(const_cast<RunConfig&>(c))); }};
}

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      stage_key("model.embed_dims", &PvtConfig::embed_dims),
      stage_key("model.depths", &PvtConfig::depths),
      stage_key("model.num_heads", &PvtConfig::num_heads),
      stage_key("model.sr_ratios", &PvtConfig::sr_ratios),
      stage_key("model.mlp_ratios", &PvtConfig::mlp_ratios),
      stage_key("model.patch_kernels", &PvtConfig::patch_kernels),
      stage_key("model.patch_strides", &PvtConfig::patch_strides),
      stage_key("model.patch_paddings", &PvtConfig::patch_paddings),
      size_key("model.input_channels", [](RunConfig& c) -> std::size_t& { return c.model.input_channels; }),
      size_key("model.input_resolution", [](RunConfig& c) -> std::size_t& { return c.model.input_resolution; }),
      real_key("model.norm_eps", [](RunConfig& c) -> double& { return c.model.norm_eps; }),
      {"preprocess.enhancement",
       [](RunConfig& c, const std::string& v) { c.enhancement = parse_enhancement(v); },
       [](const RunConfig& c) { return to_string(c.enhancement); }},
      real_key("sampler.sigma_fraction", [](RunConfig& c) -> double& { return c.sigma_fraction; }),
      size_key("voting.rounds", [](RunConfig& c) -> std::size_t& { return c.voting.rounds; }),
      size_key("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; }),
      real_key("train.lr", [](RunConfig& c) -> double& { return c.train.optimizer.learning_rate; }),
      real_key("train.beta1", [](RunConfig& c) -> double& { return c.train.optimizer.beta1; }),
      real_key("train.beta2", [](RunConfig& c) -> double& { return c.train.optimizer.beta2; }),
      real_key("train.eps", [](RunConfig& c) -> double& { return c.train.optimizer.epsilon; }),
      real_key("train.weight_decay", [](RunConfig& c) -> double& { return c.train.optimizer.weight_decay; }),
      size_key("train.val_rounds", [](RunConfig& c) -> std::size_t& { return c.train.val_rounds; }),
      size_key("train.checkpoint_every", [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_every; }),
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return keys;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : detail::config_schema()) out.push_back(k.name);
  return out;
}

/// Sets one key. Unknown keys and malformed values throw config_error.
inline void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_schema()) {
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  }
  throw config_error("unknown config key '" + key + "'");
}

/// Parses "key=value".
inline void apply_assignment(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw config_error("expected key=value, got '" + assignment + "'");
  apply_setting(config, detail::trim(std::string_view(assignment).substr(0, eq)),
                detail::trim(std::string_view(assignment).substr(eq + 1)));
}

/// Applies a key=value text; blank lines and '#' comments are skipped.
inline void apply_config_text(RunConfig& config, std::istream& is, const std::string& origin = "config") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    try {
      apply_assignment(config, body);
    } catch (const config_error& e) {
      throw config_error(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot read config file " + path.string());
  apply_config_text(config, is, path.string());
}

/// Every key with its resolved value, one per line, in schema order. Reading
/// this text back into a default RunConfig reproduces `config`.
inline std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : detail::config_schema()) out += k.name + "=" + k.get(config) + "\n";
  return out;
}

}  // namespace ctpvt
