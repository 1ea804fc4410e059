// vprir: dataset synthesis, RIR estimation, metrics and benchmark sweeps.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <fstream>
#include <string>

#include "vprir/experiment.hpp"

namespace {

using vprir::ExperimentConfig;

struct Settings {
  std::string config_file;
  std::string profile;
  std::map<std::string, std::string> values;  // key -> value from flags
};

// Every config key becomes --<key>. Precedence: defaults < --profile <
// config file < VPRIR_OUT_DIR < flags.
void add_config_flags(CLI::App& cmd, Settings& s) {
  cmd.add_option("--config", s.config_file, "key = value configuration file")->check(CLI::ExistingFile);
  cmd.add_option("--profile", s.profile, "preset: desk (default) or full");
  for (const auto& key : vprir::config_keys()) {
    cmd.add_option_function<std::string>(
        "--" + key.name, [&s, name = key.name](const std::string& v) { s.values[name] = v; }, key.help);
  }
}

ExperimentConfig resolve(const Settings& s) {
  ExperimentConfig cfg = s.profile.empty() ? ExperimentConfig{} : vprir::profile_named(s.profile);
  if (!s.config_file.empty()) {
    std::ifstream in(s.config_file);
    if (!in) throw vprir::IoError("cannot open " + s.config_file);
    vprir::apply_config(cfg, in, s.config_file);
  }
  vprir::apply_env_overrides(cfg);
  for (const auto& [k, v] : s.values) {
    try {
      vprir::set_config_value(cfg, k, v);
    } catch (const vprir::ConfigError& e) {
      throw vprir::ConfigError(std::string("--") + k + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

void print_metrics(const vprir::MetricReport& m) {
  std::cout << vprir::metrics_to_json(m).dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Room impulse response estimation and benchmarking"};
  app.require_subcommand(1);

  Settings synth_s, run_s, est_s;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (dry surrogate, RIRs, noise, manifest)");
  add_config_flags(*synth, synth_s);

  auto* run = app.add_subcommand("run", "run the (rir, snr, method) sweep and write the report");
  add_config_flags(*run, run_s);
  bool skip_report = false;
  run->add_flag("--no-report", skip_report, "only write records.jsonl");

  auto* estimate = app.add_subcommand("estimate", "estimate an RIR from a reverberant and a dry WAV");
  add_config_flags(*estimate, est_s);
  std::string est_y, est_s_file, est_out, est_method = "vpr";
  estimate->add_option("--reverberant,-y", est_y, "reverberant recording")->required()->check(CLI::ExistingFile);
  estimate->add_option("--dry,-s", est_s_file, "dry source")->required()->check(CLI::ExistingFile);
  estimate->add_option("--output,-o", est_out, "RIR WAV to write")->required();
  estimate->add_option("--method", est_method, "vpr, b1 or b2")->check(CLI::IsMember(vprir::known_methods()));

  auto* metrics = app.add_subcommand("metrics", "compare an estimated RIR with a reference");
  std::string ref_file, cmp_file;
  metrics->add_option("reference", ref_file, "reference RIR WAV")->required()->check(CLI::ExistingFile);
  metrics->add_option("estimate", cmp_file, "estimated RIR WAV")->required()->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "summarize records.jsonl in an output directory");
  std::string report_dir;
  report->add_option("out_dir", report_dir, "output directory (default: VPRIR_OUT_DIR or results)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto cfg = resolve(synth_s);
      const auto info = vprir::synth_dataset(cfg);
      std::cout << "wrote " << info.rirs << " RIRs and " << info.trials << " trial specs to " << info.manifest.string()
                << "\n";
    } else if (run->parsed()) {
      const auto cfg = resolve(run_s);
      const auto records = vprir::run_experiment(cfg);
      std::size_t failed = 0;
      for (const auto& r : records)
        if (!r.error.empty()) {
          ++failed;
          std::cerr << r.trial_id << ": " << r.error << "\n";
        }
      std::cout << records.size() << " trials, " << failed << " failed; records in "
                << (cfg.out_dir / "records.jsonl").string() << "\n";
      if (!skip_report) {
        vprir::report(cfg.out_dir);
        std::ifstream in(cfg.out_dir / "summary.txt");
        std::cout << in.rdbuf();
      }
    } else if (estimate->parsed()) {
      auto cfg = resolve(est_s);
      const auto y_audio = vprir::load_wav(est_y);
      const auto s_audio = vprir::load_wav(est_s_file);
      auto y = vprir::resample(y_audio.samples, y_audio.sample_rate, cfg.sample_rate);
      auto s = vprir::resample(s_audio.samples, s_audio.sample_rate, cfg.sample_rate);
      y.resize(s.size() + cfg.rir_length - 1, 0.0);  // T = L_s + L_h - 1
      vprir::TrialRecord rec;
      const auto h = vprir::run_method(est_method, y, s, cfg, rec);
      vprir::save_wav(est_out, h, cfg.sample_rate);
      std::cout << "wrote " << h.size() << "-tap RIR to " << est_out;
      if (rec.iterations_used) std::cout << " after " << rec.iterations_used << " iterations";
      std::cout << "\n";
    } else if (metrics->parsed()) {
      const auto ref = vprir::load_wav(ref_file);
      const auto est = vprir::load_wav(cmp_file);
      if (ref.sample_rate != est.sample_rate)
        throw vprir::InvalidArgument("sample rates differ (" + std::to_string(ref.sample_rate) + " vs " +
                                     std::to_string(est.sample_rate) + ")");
      auto a = ref.samples, b = est.samples;
      const auto n = std::max(a.size(), b.size());
      a.resize(n, 0.0);
      b.resize(n, 0.0);
      print_metrics(vprir::compare(a, b, ref.sample_rate));
    } else if (report->parsed()) {
      ExperimentConfig cfg;
      vprir::apply_env_overrides(cfg);
      const std::filesystem::path dir = report_dir.empty() ? cfg.out_dir : std::filesystem::path(report_dir);
      const auto res = vprir::report(dir);
      std::ifstream in(dir / "summary.txt");
      std::cout << in.rdbuf();
      return res.empty ? 3 : 0;
    }
  } catch (const vprir::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
