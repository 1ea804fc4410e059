#pragma once

// Dataset generation, the (rir, snr, method) sweep and its report.
//
// Layout of a dataset directory:
//   dry/    one or more dry WAVs (the first in name order is used)
//   rirs/   reference RIR WAVs
//   noise/  noise WAVs, used in name order and cycled over the RIRs
//   manifest.json   written by synth_dataset
// Layout of an output directory:
//   config.txt, records.jsonl, estimates/<trial>.wav,
//   summary.csv, summary.txt, curves/<trial>_edc.csv, curves/<trial>_edr.csv

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "vprir/baselines.hpp"
#include "vprir/config.hpp"
#include "vprir/errors.hpp"
#include "vprir/fft.hpp"
#include "vprir/inference.hpp"
#include "vprir/metrics.hpp"
#include "vprir/resample.hpp"
#include "vprir/synth.hpp"
#include "vprir/wav.hpp"

namespace vprir {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// SplitMix64 over (seed, stream, index): independent, stable sub-seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t z = seed ^ (stream * 0x9E3779B97F4A7C15ULL) ^ (index * 0xBF58476D1CE4E5B9ULL);
  for (int i = 0; i < 2; ++i) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
  }
  return z;
}

inline std::string index_id(const char* prefix, std::size_t i) {
  std::ostringstream os;
  os << prefix << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

inline std::string snr_tag(double snr) {
  std::ostringstream os;
  os << snr;
  auto s = os.str();
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

inline std::string trial_id(const std::string& rir_id, double snr, const std::string& method) {
  return rir_id + "_snr" + snr_tag(snr) + "_" + method;
}

inline std::vector<fs::path> wav_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<double> load_at_rate(const fs::path& path, int rate) {
  auto audio = load_wav(path);
  if (audio.sample_rate == rate) return std::move(audio.samples);
  return resample(audio.samples, audio.sample_rate, rate);
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetInfo {
  fs::path manifest;
  std::size_t rirs = 0;
  std::size_t trials = 0;
  bool surrogate_source = true;
};

inline DatasetInfo synth_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path root = cfg.dataset_dir;
  const auto fs_rate = static_cast<double>(cfg.sample_rate);
  const std::size_t ls = cfg.source_length();
  const std::size_t t_len = ls + cfg.rir_length - 1;
  fs::create_directories(root / "rirs");
  fs::create_directories(root / "noise");

  json manifest;
  manifest["sample_rate"] = cfg.sample_rate;
  manifest["L_h"] = cfg.rir_length;
  manifest["duration_s"] = cfg.duration_s;
  manifest["seed"] = cfg.seed;
  manifest["snr_list_db"] = cfg.snr_list_db;

  DatasetInfo info;
  const auto user_dry = cfg.dry_dir.empty() ? std::vector<fs::path>{} : wav_files(cfg.dry_dir);
  if (!user_dry.empty()) {
    info.surrogate_source = false;
    manifest["dry"] = {{"file", user_dry.front().string()}, {"kind", "user-supplied"}};
  } else {
    const auto dry = speech_shaped_noise(ls, fs_rate, derive_seed(cfg.seed, 1, 0), cfg.dry_rms);
    const fs::path file = root / "dry" / "dry_000.wav";
    save_wav(file, dry, cfg.sample_rate);
    manifest["dry"] = {{"file", file.string()},
                       {"kind", "surrogate"},
                       {"description",
                        "speech-shaped noise: white noise through a fixed order-8 all-pole formant envelope, "
                        "band-limited by [1, 0, -1]"},
                       {"rms", cfg.dry_rms}};
  }

  RirDraw draw;
  draw.rt60_min_s = cfg.rt60_min_s;
  draw.rt60_max_s = cfg.rt60_max_s;
  manifest["rirs"] = json::array();
  manifest["noise"] = json::array();
  manifest["trials"] = json::array();
  for (std::size_t r = 0; r < cfg.n_rirs; ++r) {
    const auto id = index_id("rir", r);
    const auto rir = synth_rir(cfg.rir_length, fs_rate, derive_seed(cfg.seed, 2, r), draw);
    const fs::path rir_file = root / "rirs" / (id + ".wav");
    save_wav(rir_file, rir.h, cfg.sample_rate);
    manifest["rirs"].push_back({{"id", id},
                                {"file", rir_file.string()},
                                {"rt30_s", rir.rt30_s},
                                {"a", rir.params.a},
                                {"g", rir.params.g},
                                {"p", rir.params.p},
                                {"attempts", rir.attempts}});

    const fs::path noise_file = root / "noise" / index_id("noise", r).append(".wav");
    save_wav(noise_file, white_noise(t_len, 1.0, derive_seed(cfg.seed, 3, r)), cfg.sample_rate);
    manifest["noise"].push_back(noise_file.string());

    for (double snr : cfg.snr_list_db)
      manifest["trials"].push_back({{"trial_id", id + "_snr" + snr_tag(snr)},
                                    {"rir_id", id},
                                    {"snr_db", snr},
                                    {"noise", noise_file.string()}});
  }
  info.manifest = root / "manifest.json";
  std::ofstream(info.manifest) << manifest.dump(2) << "\n";
  info.rirs = cfg.n_rirs;
  info.trials = manifest["trials"].size();
  return info;
}

struct Dataset {
  std::vector<double> dry;
  std::vector<std::string> rir_ids;
  std::vector<fs::path> rir_files;
  std::vector<std::vector<double>> rirs;
  std::vector<std::vector<double>> noise;  // one track per RIR, length >= T
};

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  const std::size_t ls = cfg.source_length();
  const std::size_t t_len = ls + cfg.rir_length - 1;

  const auto dry_files = wav_files(cfg.resolved_dry_dir());
  if (dry_files.empty()) throw IoError("no dry WAV in " + cfg.resolved_dry_dir().string());
  d.dry = load_at_rate(dry_files.front(), cfg.sample_rate);
  if (d.dry.size() < ls)
    throw IoError(dry_files.front().string() + " has " + std::to_string(d.dry.size()) + " samples, need " +
                  std::to_string(ls));
  d.dry.resize(ls);

  d.rir_files = wav_files(cfg.resolved_rir_dir());
  if (d.rir_files.empty()) throw IoError("no RIR WAV in " + cfg.resolved_rir_dir().string());
  for (const auto& f : d.rir_files) {
    auto h = load_at_rate(f, cfg.sample_rate);
    h.resize(cfg.rir_length, 0.0);
    d.rir_ids.push_back(f.stem().string());
    d.rirs.push_back(std::move(h));
  }

  const auto noise_files = wav_files(cfg.resolved_noise_dir());
  for (std::size_t r = 0; r < d.rirs.size(); ++r) {
    std::vector<double> track;
    if (noise_files.empty()) {
      track = white_noise(t_len, 1.0, derive_seed(cfg.seed, 3, r));
    } else {
      const auto src = load_at_rate(noise_files[r % noise_files.size()], cfg.sample_rate);
      if (src.empty()) throw IoError("empty noise file " + noise_files[r % noise_files.size()].string());
      track.resize(t_len);
      for (std::size_t i = 0; i < t_len; ++i) track[i] = src[i % src.size()];
    }
    d.noise.push_back(std::move(track));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Trials

struct TrialRecord {
  std::string trial_id;
  std::string rir_id;
  double snr_db = 0.0;
  std::string method;
  std::optional<MetricReport> metrics;
  double wall_time_s = 0.0;
  std::size_t iterations_used = 0;
  std::optional<double> final_loss;
  std::string error;      // empty on success
  std::string reference;  // reference RIR file
  std::string estimate;   // estimate WAV, empty on failure
};

inline json metrics_to_json(const MetricReport& m) {
  return {{"rt30_pct", m.delta_rt30_percent}, {"edc", m.delta_edc}, {"edr", m.delta_edr}, {"mse_pct", m.mse_percent}};
}

inline json to_json(const TrialRecord& r) {
  json j{{"trial_id", r.trial_id},
         {"rir_id", r.rir_id},
         {"snr_db", r.snr_db},
         {"method", r.method},
         {"wall_time_s", r.wall_time_s},
         {"iterations_used", r.iterations_used},
         {"reference", r.reference},
         {"estimate", r.estimate}};
  j["metrics"] = r.metrics ? metrics_to_json(*r.metrics) : json(nullptr);
  j["final_loss"] = r.final_loss ? json(*r.final_loss) : json(nullptr);
  j["error"] = r.error.empty() ? json(nullptr) : json(r.error);
  return j;
}

inline TrialRecord record_from_json(const json& j) {
  TrialRecord r;
  r.trial_id = j.at("trial_id").get<std::string>();
  r.rir_id = j.at("rir_id").get<std::string>();
  r.snr_db = j.at("snr_db").get<double>();
  r.method = j.at("method").get<std::string>();
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.iterations_used = j.value("iterations_used", std::size_t{0});
  r.reference = j.value("reference", std::string{});
  r.estimate = j.value("estimate", std::string{});
  if (const auto& m = j.at("metrics"); !m.is_null())
    r.metrics = MetricReport{m.at("rt30_pct").get<double>(), m.at("edc").get<double>(), m.at("edr").get<double>(),
                             m.at("mse_pct").get<double>()};
  if (const auto& l = j.at("final_loss"); !l.is_null()) r.final_loss = l.get<double>();
  if (const auto& e = j.at("error"); !e.is_null()) r.error = e.get<std::string>();
  return r;
}

// Lines that fail to parse (a write cut short by a crash) are ignored.
inline std::vector<TrialRecord> read_records(const fs::path& file) {
  std::vector<TrialRecord> out;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception&) {
    }
  }
  return out;
}

class RecordAppender {
 public:
  explicit RecordAppender(const fs::path& file) : file_(file) {
    // Terminate a partial last line so the next record starts cleanly.
    if (fs::exists(file) && fs::file_size(file) > 0) {
      std::ifstream in(file, std::ios::binary);
      in.seekg(-1, std::ios::end);
      char last = '\n';
      in.get(last);
      if (last != '\n') std::ofstream(file, std::ios::app) << "\n";
    }
    out_.open(file, std::ios::app);
    if (!out_) throw IoError("cannot append to " + file.string());
  }

  void append(const TrialRecord& r) {
    const auto line = to_json(r).dump();
    std::lock_guard lock(mutex_);
    out_ << line << "\n";
    out_.flush();
  }

 private:
  fs::path file_;
  std::ofstream out_;
  std::mutex mutex_;
};

struct TrialInput {
  std::size_t rir_index = 0;
  double snr_db = 0.0;
  std::string method;
  std::string id;
};

inline std::vector<double> run_method(const std::string& method, std::span<const double> y, std::span<const double> s,
                                      const ExperimentConfig& cfg, TrialRecord& rec) {
  if (method == "vpr") {
    const auto res = estimate_rir(y, s, cfg.inference);
    rec.iterations_used = res.state.loss_history.size();
    if (!res.state.loss_history.empty()) rec.final_loss = res.state.loss_history.back();
    return res.rir;
  }
  if (method == "b1") return spectral_deconvolution(y, s, cfg.rir_length, cfg.stft).rir;
  if (method == "b2") return crossband_deconvolution(y, s, cfg.rir_length, cfg.stft, cfg.b2_bands, cfg.b2_ridge).rir;
  throw ConfigError("unknown method '" + method + "'");
}

inline TrialRecord run_trial(const TrialInput& t, const Dataset& d, const ExperimentConfig& cfg) {
  TrialRecord rec;
  rec.trial_id = t.id;
  rec.rir_id = d.rir_ids[t.rir_index];
  rec.snr_db = t.snr_db;
  rec.method = t.method;
  rec.reference = d.rir_files[t.rir_index].string();
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto& h = d.rirs[t.rir_index];
    const auto clean = fft::convolve(d.dry, h);
    if (clean.size() != d.dry.size() + h.size() - 1) throw NumericError("convolution length bookkeeping failed");
    const auto y = mix_at_snr(clean, d.noise[t.rir_index], t.snr_db).noisy;
    const auto est = run_method(t.method, y, d.dry, cfg, rec);
    rec.metrics = compare(h, est, static_cast<double>(cfg.sample_rate));
    const fs::path file = cfg.out_dir / "estimates" / (t.id + ".wav");
    save_wav(file, est, cfg.sample_rate);
    rec.estimate = file.string();
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

inline std::vector<TrialInput> plan_trials(const Dataset& d, const ExperimentConfig& cfg) {
  std::vector<TrialInput> out;
  for (std::size_t r = 0; r < d.rirs.size(); ++r)
    for (double snr : cfg.snr_list_db)
      for (const auto& m : cfg.methods) out.push_back({r, snr, m, trial_id(d.rir_ids[r], snr, m)});
  return out;
}

// Runs every (rir, snr, method) triple not already in records.jsonl and
// returns the records of the planned trials in plan order.
inline std::vector<TrialRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto d = load_dataset(cfg);
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir / "config.txt") << to_text(cfg);
  const fs::path records_file = cfg.out_dir / "records.jsonl";

  std::map<std::string, TrialRecord> done;
  for (auto& r : read_records(records_file)) done[r.trial_id] = std::move(r);

  const auto plan = plan_trials(d, cfg);
  std::vector<const TrialInput*> todo;
  for (const auto& t : plan)
    if (!done.count(t.id)) todo.push_back(&t);

  RecordAppender appender(records_file);
  std::vector<TrialRecord> fresh(todo.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      fresh[i] = run_trial(*todo[i], d, cfg);
      appender.append(fresh[i]);
    }
  };
  const std::size_t n_workers = std::min(cfg.worker_count(), std::max<std::size_t>(todo.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (auto& r : fresh) done[r.trial_id] = std::move(r);
  std::vector<TrialRecord> out;
  for (const auto& t : plan) out.push_back(done.at(t.id));
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct Stat {
  double median = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single value
};

inline Stat median_std(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median_std: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  Stat s;
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (n > 1) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    s.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

struct SummaryRow {
  double snr_db = 0.0;
  std::string method;
  std::size_t trials = 0;
  std::size_t failed = 0;
  Stat rt30_pct, edc, edr, mse_pct;  // column order of the results table
};

struct ReportResult {
  std::vector<SummaryRow> rows;
  bool empty = false;
  std::size_t curve_files = 0;
};

inline std::vector<SummaryRow> summarize(const std::vector<TrialRecord>& records) {
  std::map<std::pair<double, std::string>, std::vector<const TrialRecord*>> cells;
  for (const auto& r : records) cells[{r.snr_db, r.method}].push_back(&r);
  auto method_rank = [](const std::string& m) {
    const auto& k = known_methods();
    return static_cast<std::size_t>(std::find(k.begin(), k.end(), m) - k.begin());
  };
  std::vector<std::pair<double, std::string>> keys;
  for (const auto& [k, _] : cells) keys.push_back(k);
  std::sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    if (method_rank(a.second) != method_rank(b.second)) return method_rank(a.second) < method_rank(b.second);
    return a.second < b.second;
  });

  std::vector<SummaryRow> rows;
  for (const auto& key : keys) {
    SummaryRow row;
    row.snr_db = key.first;
    row.method = key.second;
    std::vector<double> rt, edc, edr, mse;
    for (const auto* r : cells[key]) {
      ++row.trials;
      if (!r->metrics) {
        ++row.failed;
        continue;
      }
      rt.push_back(r->metrics->delta_rt30_percent);
      edc.push_back(r->metrics->delta_edc);
      edr.push_back(r->metrics->delta_edr);
      mse.push_back(r->metrics->mse_percent);
    }
    if (!mse.empty()) {
      row.rt30_pct = median_std(rt);
      row.edc = median_std(edc);
      row.edr = median_std(edr);
      row.mse_pct = median_std(mse);
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string format_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  auto cell = [](const Stat& s, int precision) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(precision) << s.median << " +- " << s.stddev;
    return c.str();
  };
  const char* header = "dRT30 (%)";
  std::optional<double> current;
  for (const auto& r : rows) {
    if (!current || *current != r.snr_db) {
      current = r.snr_db;
      os << "\nSNR: " << r.snr_db << " dB\n";
      os << std::left << std::setw(8) << "method" << std::setw(20) << header << std::setw(18) << "dEDC"
         << std::setw(18) << "dEDR" << std::setw(22) << "MSE (%)" << "n\n";
    }
    os << std::left << std::setw(8) << r.method;
    if (r.trials == r.failed) {
      os << "all " << r.trials << " trials failed\n";
      continue;
    }
    os << std::setw(20) << cell(r.rt30_pct, 1) << std::setw(18) << cell(r.edc, 3) << std::setw(18) << cell(r.edr, 2)
       << std::setw(22) << cell(r.mse_pct, 2) << (r.trials - r.failed);
    if (r.failed) os << " (" << r.failed << " failed)";
    os << "\n";
  }
  return os.str();
}

inline std::size_t write_curves(const TrialRecord& r, const fs::path& dir) {
  if (r.estimate.empty() || r.reference.empty() || !fs::exists(r.estimate) || !fs::exists(r.reference)) return 0;
  auto ref = load_wav(r.reference).samples;
  auto est = load_wav(r.estimate).samples;
  const std::size_t n = std::max(ref.size(), est.size());
  ref.resize(n, 0.0);
  est.resize(n, 0.0);
  std::size_t written = 0;
  try {
    const auto a = edc(ref), b = edc(est);
    std::ofstream f(dir / (r.trial_id + "_edc.csv"));
    f << "sample,ref,est\n";
    f.precision(10);
    for (std::size_t i = 0; i < n; ++i) f << i << "," << a[i] << "," << b[i] << "\n";
    ++written;
    const auto ra = edr(ref), rb = edr(est);
    std::ofstream g(dir / (r.trial_id + "_edr.csv"));
    g << "bin,frame,ref_db,est_db\n";
    g.precision(8);
    for (Eigen::Index f_ = 0; f_ < ra.values.rows(); ++f_)
      for (Eigen::Index t = 0; t < ra.values.cols(); ++t)
        g << f_ << "," << t << "," << to_db_floored(ra.values(f_, t)) << "," << to_db_floored(rb.values(f_, t)) << "\n";
    ++written;
  } catch (const Error&) {
    // Curves are a convenience; a degenerate estimate only loses its plot data.
  }
  return written;
}

inline ReportResult report(const fs::path& out_dir) {
  const auto records = read_records(out_dir / "records.jsonl");
  ReportResult res;
  fs::create_directories(out_dir);
  if (records.empty()) {
    res.empty = true;
    const std::string notice = "empty report: no trial records in " + (out_dir / "records.jsonl").string() + "\n";
    std::ofstream(out_dir / "summary.txt") << notice;
    std::ofstream(out_dir / "summary.csv") << "# " << notice;
    return res;
  }
  res.rows = summarize(records);

  std::ofstream csv(out_dir / "summary.csv");
  csv << "snr_db,method,n,failed,rt30_pct_median,rt30_pct_std,edc_median,edc_std,edr_median,edr_std,mse_pct_median,"
         "mse_pct_std\n";
  csv.precision(10);
  for (const auto& r : res.rows)
    csv << r.snr_db << "," << r.method << "," << r.trials << "," << r.failed << "," << r.rt30_pct.median << ","
        << r.rt30_pct.stddev << "," << r.edc.median << "," << r.edc.stddev << "," << r.edr.median << ","
        << r.edr.stddev << "," << r.mse_pct.median << "," << r.mse_pct.stddev << "\n";
  std::ofstream(out_dir / "summary.txt") << "Deviation from the reference RIR, median +- standard deviation\n"
                                         << format_table(res.rows);

  const fs::path curves = out_dir / "curves";
  fs::create_directories(curves);
  for (const auto& r : records) res.curve_files += write_curves(r, curves);
  return res;
}

}  // namespace vprir
