#pragma once

// Experiment configuration: a flat `key = value` text format, two presets
// (desk and full scale) and an environment override for the output
// directory.
//
// File format:
//   # comment
//   profile = full           (applies the preset; later keys override it)
//   L_h = 512
//   snr_list_db = 20, 10, 0
//   methods = vpr, b1

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vprir/errors.hpp"
#include "vprir/inference.hpp"
#include "vprir/stft.hpp"

namespace vprir {

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m{"vpr", "b1", "b2"};
  return m;
}

struct ExperimentConfig {
  std::string profile = "desk";
  int sample_rate = 8000;
  std::size_t rir_length = 256;  // L_h
  double duration_s = 1.0;
  std::vector<double> snr_list_db{20.0, 10.0, 3.0, 0.0};
  std::vector<std::string> methods{"vpr", "b1", "b2"};
  std::uint64_t seed = 1;
  std::size_t n_rirs = 6;
  std::size_t workers = 0;  // 0: one per hardware thread
  std::filesystem::path dataset_dir = "data";
  std::filesystem::path dry_dir;    // empty: <dataset_dir>/dry
  std::filesystem::path rir_dir;    // empty: <dataset_dir>/rirs
  std::filesystem::path noise_dir;  // empty: <dataset_dir>/noise
  std::filesystem::path out_dir = "results";
  double dry_rms = 0.05;
  double rt60_min_s = 0.06;
  double rt60_max_s = 0.25;
  InferenceConfig inference{.iterations = 2000, .rir_length = 256};
  StftConfig stft{};
  std::size_t b2_bands = 1;
  double b2_ridge = 1e-10;

  std::filesystem::path resolved_dry_dir() const { return dry_dir.empty() ? dataset_dir / "dry" : dry_dir; }
  std::filesystem::path resolved_rir_dir() const { return rir_dir.empty() ? dataset_dir / "rirs" : rir_dir; }
  std::filesystem::path resolved_noise_dir() const { return noise_dir.empty() ? dataset_dir / "noise" : noise_dir; }
  std::size_t source_length() const {
    return static_cast<std::size_t>(std::llround(duration_s * static_cast<double>(sample_rate)));
  }
  std::size_t worker_count() const {
    return workers > 0 ? workers : std::max(1u, std::thread::hardware_concurrency());
  }

  void validate() const {
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (!(duration_s > 0.0)) throw ConfigError("duration_s must be positive");
    if (rir_length == 0 || static_cast<double>(rir_length) >= duration_s * sample_rate)
      throw ConfigError("L_h must satisfy 0 < L_h < sample_rate * duration_s (L_h=" + std::to_string(rir_length) +
                        ", sample_rate * duration_s=" + std::to_string(duration_s * sample_rate) + ")");
    if (inference.rir_length != rir_length) throw ConfigError("inference L_h differs from experiment L_h");
    if (snr_list_db.empty()) throw ConfigError("snr_list_db must not be empty");
    for (double s : snr_list_db)
      if (!std::isfinite(s)) throw ConfigError("snr_list_db values must be finite");
    if (methods.empty()) throw ConfigError("methods must not be empty");
    for (const auto& m : methods)
      if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
        throw ConfigError("unknown method '" + m + "' (expected vpr, b1 or b2)");
    if (n_rirs == 0) throw ConfigError("n_rirs must be positive");
    if (!(dry_rms > 0.0)) throw ConfigError("dry_rms must be positive");
    if (!(rt60_min_s > 0.0) || rt60_max_s <= rt60_min_s) throw ConfigError("need 0 < rt60_min_s < rt60_max_s");
    if (inference.iterations == 0) throw ConfigError("iterations must be positive");
    if (!(inference.lr > 0.0)) throw ConfigError("lr must be positive");
    if (inference.g_length == 0 || inference.p_length == 0) throw ConfigError("L_g and L_p must be positive");
    if (inference.g_length >= rir_length || inference.p_length >= rir_length)
      throw ConfigError("L_g and L_p must be smaller than L_h");
    if (b2_bands == 0) throw ConfigError("b2_bands must be positive");
    if (!(b2_ridge >= 0.0)) throw ConfigError("b2_ridge must be >= 0");
    stft.validate();
  }
};

// Full scale: 1000-tap RIRs, 2 s sources, 30 RIRs, five SNRs.
inline ExperimentConfig full_profile() {
  ExperimentConfig c;
  c.profile = "full";
  c.rir_length = 1000;
  c.inference.rir_length = 1000;
  c.duration_s = 2.0;
  c.snr_list_db = {20.0, 10.0, 3.0, 0.0, -3.0};
  c.n_rirs = 30;
  c.inference.iterations = 5000;
  return c;
}

inline ExperimentConfig desk_profile() { return ExperimentConfig{}; }

inline ExperimentConfig profile_named(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "full") return full_profile();
  throw ConfigError("unknown profile '" + name + "' (expected desk or full)");
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  }
}

inline std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0.0 || d != std::floor(d)) throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
  return static_cast<std::uint64_t>(d);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  return os.str();
}

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  using namespace detail;
  static const std::vector<ConfigKey> keys{
      {"sample_rate", "processing sample rate in Hz",
       [](C& c, const std::string& v) { c.sample_rate = static_cast<int>(to_unsigned("sample_rate", v)); },
       [](const C& c) { return std::to_string(c.sample_rate); }},
      {"L_h", "RIR length in samples",
       [](C& c, const std::string& v) { c.rir_length = c.inference.rir_length = to_unsigned("L_h", v); },
       [](const C& c) { return std::to_string(c.rir_length); }},
      {"duration_s", "dry source duration in seconds",
       [](C& c, const std::string& v) { c.duration_s = to_double("duration_s", v); },
       [](const C& c) { return num(c.duration_s); }},
      {"snr_list_db", "comma-separated SNRs in dB",
       [](C& c, const std::string& v) {
         c.snr_list_db.clear();
         for (const auto& s : split_list(v)) c.snr_list_db.push_back(to_double("snr_list_db", s));
       },
       [](const C& c) { return join(c.snr_list_db); }},
      {"methods", "comma-separated subset of vpr, b1, b2",
       [](C& c, const std::string& v) {
         auto m = split_list(v);
         for (const auto& x : m)
           if (std::find(known_methods().begin(), known_methods().end(), x) == known_methods().end())
             throw ConfigError("unknown method '" + x + "' (expected vpr, b1 or b2)");
         c.methods = std::move(m);
       },
       [](const C& c) { return join(c.methods); }},
      {"seed", "base random seed", [](C& c, const std::string& v) { c.seed = to_unsigned("seed", v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"n_rirs", "number of synthetic RIRs",
       [](C& c, const std::string& v) { c.n_rirs = to_unsigned("n_rirs", v); },
       [](const C& c) { return std::to_string(c.n_rirs); }},
      {"workers", "concurrent trials (0: hardware threads)",
       [](C& c, const std::string& v) { c.workers = to_unsigned("workers", v); },
       [](const C& c) { return std::to_string(c.workers); }},
      {"dataset_dir", "dataset root", [](C& c, const std::string& v) { c.dataset_dir = v; },
       [](const C& c) { return c.dataset_dir.string(); }},
      {"dry_dir", "directory of dry WAVs (default <dataset_dir>/dry)",
       [](C& c, const std::string& v) { c.dry_dir = v; }, [](const C& c) { return c.dry_dir.string(); }},
      {"rir_dir", "directory of RIR WAVs (default <dataset_dir>/rirs)",
       [](C& c, const std::string& v) { c.rir_dir = v; }, [](const C& c) { return c.rir_dir.string(); }},
      {"noise_dir", "directory of noise WAVs (default <dataset_dir>/noise)",
       [](C& c, const std::string& v) { c.noise_dir = v; }, [](const C& c) { return c.noise_dir.string(); }},
      {"out_dir", "results directory (env VPRIR_OUT_DIR overrides)",
       [](C& c, const std::string& v) { c.out_dir = v; }, [](const C& c) { return c.out_dir.string(); }},
      {"dry_rms", "RMS level of the synthetic dry source",
       [](C& c, const std::string& v) { c.dry_rms = to_double("dry_rms", v); },
       [](const C& c) { return num(c.dry_rms); }},
      {"rt60_min_s", "lower RT60 bound for synthetic RIRs",
       [](C& c, const std::string& v) { c.rt60_min_s = to_double("rt60_min_s", v); },
       [](const C& c) { return num(c.rt60_min_s); }},
      {"rt60_max_s", "upper RT60 bound for synthetic RIRs",
       [](C& c, const std::string& v) { c.rt60_max_s = to_double("rt60_max_s", v); },
       [](const C& c) { return num(c.rt60_max_s); }},
      {"iterations", "optimizer iterations",
       [](C& c, const std::string& v) { c.inference.iterations = to_unsigned("iterations", v); },
       [](const C& c) { return std::to_string(c.inference.iterations); }},
      {"lr", "Adam learning rate", [](C& c, const std::string& v) { c.inference.lr = to_double("lr", v); },
       [](const C& c) { return num(c.inference.lr); }},
      {"L_g", "trainable microphone filter taps",
       [](C& c, const std::string& v) { c.inference.g_length = to_unsigned("L_g", v); },
       [](const C& c) { return std::to_string(c.inference.g_length); }},
      {"L_p", "frequency-dependent decay filter taps",
       [](C& c, const std::string& v) { c.inference.p_length = to_unsigned("L_p", v); },
       [](const C& c) { return std::to_string(c.inference.p_length); }},
      {"early_stop", "stop when the loss stalls",
       [](C& c, const std::string& v) { c.inference.early_stop = to_bool("early_stop", v); },
       [](const C& c) { return std::string(c.inference.early_stop ? "true" : "false"); }},
      {"train_noise", "train the observation noise level",
       [](C& c, const std::string& v) { c.inference.train_noise = to_bool("train_noise", v); },
       [](const C& c) { return std::string(c.inference.train_noise ? "true" : "false"); }},
      {"n_fft", "STFT size for the baselines",
       [](C& c, const std::string& v) { c.stft.n_fft = to_unsigned("n_fft", v); },
       [](const C& c) { return std::to_string(c.stft.n_fft); }},
      {"hop", "STFT hop for the baselines", [](C& c, const std::string& v) { c.stft.hop = to_unsigned("hop", v); },
       [](const C& c) { return std::to_string(c.stft.hop); }},
      {"window", "STFT window for the baselines: hann or rect",
       [](C& c, const std::string& v) {
         if (v == "hann") c.stft.window = Window::hann;
         else if (v == "rect") c.stft.window = Window::rect;
         else throw ConfigError("key 'window': '" + v + "' is not hann or rect");
       },
       [](const C& c) { return std::string(c.stft.window == Window::rect ? "rect" : "hann"); }},
      {"center", "pad the signal by n_fft/2 on both sides before framing",
       [](C& c, const std::string& v) { c.stft.center = to_bool("center", v); },
       [](const C& c) { return std::string(c.stft.center ? "true" : "false"); }},
      {"b2_bands", "cross-band count K", [](C& c, const std::string& v) { c.b2_bands = to_unsigned("b2_bands", v); },
       [](const C& c) { return std::to_string(c.b2_bands); }},
      {"b2_ridge", "relative ridge for cross-band least squares",
       [](C& c, const std::string& v) { c.b2_ridge = to_double("b2_ridge", v); },
       [](const C& c) { return num(c.b2_ridge); }},
  };
  return keys;
}

inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "profile") {
    const auto out = cfg.out_dir;
    cfg = profile_named(detail::trim(value));
    cfg.out_dir = out;
    return;
  }
  for (const auto& k : config_keys())
    if (k.name == key) return k.set(cfg, detail::trim(value));
  throw ConfigError("unknown config key '" + key + "'");
}

inline void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* out = std::getenv("VPRIR_OUT_DIR"); out != nullptr && *out != '\0') cfg.out_dir = out;
}

// Applies `key = value` lines on top of cfg.
inline void apply_config(ExperimentConfig& cfg, std::istream& in, const std::string& origin = "<config>") {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  ExperimentConfig cfg;
  apply_config(cfg, in, origin);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path.string());
  return parse_config(in, path.string());
}

inline std::string to_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "profile = " << cfg.profile << "\n";
  for (const auto& k : config_keys()) os << k.name << " = " << k.get(cfg) << "\n";
  return os.str();
}

}  // namespace vprir
