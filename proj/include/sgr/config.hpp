#pragma once

// Flat key=value run configuration. Keys match the command-line flag names
// without the leading dashes; '#' starts a comment.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgr/train.hpp"

namespace sgr {

using KeyValues = std::map<std::string, std::string>;

struct RunSettings {
  TrainConfig train;
  std::filesystem::path out = "sgr_out";
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": integer out of range '" + v + "'");
  }
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "config") {
  KeyValues out;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(number) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(number) + ": empty key");
    out[key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

inline KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_key_values(in, path.string());
}

// Every key apply_settings understands.
inline std::vector<std::string> known_config_keys() {
  return {"seed",         "k",           "l",       "d",        "beta",     "rho",          "gamma",
          "steps",        "lr",          "no-token-supervision", "out",      "width",        "height",
          "channels",     "layers",      "heads",   "classes",  "momentum", "power",        "focal-gamma",
          "train-scenes", "eval-scenes", "noise"};
}

// Applies `kv` on top of `s`; unknown keys are rejected. Validation of the
// resulting combination is left to the consumer.
inline void apply_settings(RunSettings& s, const KeyValues& kv) {
  auto& t = s.train;
  using detail::parse_count;
  using detail::parse_real;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
      {"seed", [&](auto& k, auto& v) { t.seed = parse_count(k, v); }},
      {"k", [&](auto& k, auto& v) { t.model.concepts = parse_count(k, v); }},
      {"l", [&](auto& k, auto& v) { t.model.active = parse_count(k, v); }},
      {"d", [&](auto& k, auto& v) { t.model.token_dim = parse_count(k, v); }},
      {"beta", [&](auto& k, auto& v) { t.weights.beta = parse_real(k, v); }},
      {"rho", [&](auto& k, auto& v) { t.weights.rho = parse_real(k, v); }},
      {"gamma", [&](auto& k, auto& v) { t.weights.gamma = parse_real(k, v); }},
      {"focal-gamma", [&](auto& k, auto& v) { t.weights.focal_gamma = parse_real(k, v); }},
      {"steps", [&](auto& k, auto& v) { t.steps = parse_count(k, v); }},
      {"lr", [&](auto& k, auto& v) { t.lr = parse_real(k, v); }},
      {"momentum", [&](auto& k, auto& v) { t.momentum = parse_real(k, v); }},
      {"power", [&](auto& k, auto& v) { t.poly_power = parse_real(k, v); }},
      {"no-token-supervision",
       [&](auto& k, auto& v) { t.token_supervision = !detail::parse_flag(k, v); }},
      {"out", [&](auto&, auto& v) { s.out = v; }},
      {"width", [&](auto& k, auto& v) { t.model.width = parse_count(k, v); }},
      {"height", [&](auto& k, auto& v) { t.model.height = parse_count(k, v); }},
      {"channels", [&](auto& k, auto& v) { t.model.channels = parse_count(k, v); }},
      {"layers", [&](auto& k, auto& v) { t.model.num_layers = parse_count(k, v); }},
      {"heads", [&](auto& k, auto& v) { t.model.num_heads = parse_count(k, v); }},
      {"classes", [&](auto& k, auto& v) { t.model.num_classes = parse_count(k, v); }},
      {"train-scenes", [&](auto& k, auto& v) { t.train_scenes = parse_count(k, v); }},
      {"eval-scenes", [&](auto& k, auto& v) { t.eval_scenes = parse_count(k, v); }},
      {"noise", [&](auto& k, auto& v) { t.scenes.noise = parse_real(k, v); }},
  };
  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
}

// Round-trippable key=value rendering of `s`.
inline std::string format_settings(const RunSettings& s) {
  const auto& t = s.train;
  std::ostringstream o;
  o.precision(17);
  o << "seed=" << t.seed << "\nk=" << t.model.concepts << "\nl=" << t.model.active << "\nd=" << t.model.token_dim
    << "\nbeta=" << t.weights.beta << "\nrho=" << t.weights.rho << "\ngamma=" << t.weights.gamma
    << "\nfocal-gamma=" << t.weights.focal_gamma << "\nsteps=" << t.steps << "\nlr=" << t.lr
    << "\nmomentum=" << t.momentum << "\npower=" << t.poly_power
    << "\nno-token-supervision=" << (t.token_supervision ? "false" : "true") << "\nout=" << s.out.string()
    << "\nwidth=" << t.model.width << "\nheight=" << t.model.height << "\nchannels=" << t.model.channels
    << "\nlayers=" << t.model.num_layers << "\nheads=" << t.model.num_heads << "\nclasses=" << t.model.num_classes
    << "\ntrain-scenes=" << t.train_scenes << "\neval-scenes=" << t.eval_scenes << "\nnoise=" << t.scenes.noise
    << '\n';
  return o.str();
}

}  // namespace sgr
