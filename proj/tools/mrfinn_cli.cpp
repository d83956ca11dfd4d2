// mrfinn: dictionary simulation, training and evaluation from the command line.
//
// Exit codes: 0 success, 1 usage, 2 data/format, 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrfinn/mrfinn.hpp"

#ifndef MRFINN_VERSION
#define MRFINN_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mrfinn;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------
// run.manifest

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return hex64(h);
}

/// FNV-1a of every file backing an input; dictionaries hash their three parts.
json hash_input(const std::string& path) {
  json j = json::object();
  if (fs::exists(path + ".manifest")) {
    for (const char* ext : {".manifest", ".params.bin", ".fp.bin"})
      if (fs::exists(path + ext)) j[path + ext] = hash_file(path + ext);
  } else {
    j[path] = hash_file(path);
  }
  return j;
}

class RunManifest {
 public:
  RunManifest(std::string command, const std::vector<std::string>& argv) : command_(std::move(command)) {
    doc_["tool"] = "mrfinn";
    doc_["version"] = MRFINN_VERSION;
    doc_["command"] = command_;
    doc_["argv"] = argv;
    doc_["flags"] = json::object();
    doc_["seeds"] = json::object();
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
  }
  void flag(const std::string& k, const json& v) { doc_["flags"][k] = v; }
  void seed(const std::string& k, std::uint64_t v) { doc_["seeds"][k] = v; }
  void input(const std::string& path) { doc_["inputs"].update(hash_input(path)); }
  void output(const std::string& name) { doc_["outputs"].push_back(name); }
  void write(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream out(dir / "run.manifest");
    if (!out) throw IoError("cannot write " + (dir / "run.manifest").string());
    out << doc_.dump(2) << '\n';
  }

 private:
  std::string command_;
  json doc_;
};

fs::path parent_or_dot(const std::string& path) {
  const auto p = fs::path(path).parent_path();
  return p.empty() ? fs::path(".") : p;
}

// ---------------------------------------------------------------------------
// Shared helpers

std::vector<std::string> model_labels(const std::vector<TrainedModel>& models) {
  std::map<std::string, int> seen;
  std::vector<std::string> labels;
  for (const auto& m : models) {
    std::string l = to_string(m.kind);
    if (++seen[l] > 1) l += "_" + std::to_string(seen[l]);
    labels.push_back(l);
  }
  return labels;
}

void require_compatible(const TrainedModel& m, const Dictionary& d, const std::string& what) {
  if (m.fingerprint_length() != d.length())
    throw ShapeError(what + " expects fingerprints of length " + std::to_string(m.fingerprint_length()) +
                     ", dictionary has " + std::to_string(d.length()));
}

Dictionary maybe_subsample(const Dictionary& d, std::size_t max_entries, std::uint64_t seed) {
  if (max_entries == 0 || static_cast<std::size_t>(d.size()) <= max_entries) return d;
  return stratified_subsample(d, max_entries, seed);
}

void print_metrics(const std::string& label, const MetricsReport& r) {
  std::printf("%-10s %-8s %12s %12s %10s %10s %8s\n", "model", "param", "MAE", "MAE sd", "MRE %", "MRE sd", "R2");
  for (int p = 0; p < kNumParams; ++p) {
    const auto& m = r.params[p];
    std::printf("%-10s %-8s %12.5g %12.5g %10.4f %10.4f %8.5f\n", label.c_str(), kParamNames[p], m.mae_mean, m.mae_sd,
                m.mre_mean, m.mre_sd, m.r2);
  }
}

// ---------------------------------------------------------------------------
// Commands

struct TrainArgs {
  std::string model;
  std::string train_path;
  std::string val_path;
  std::string config_path;
  std::string out;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string bwd_loss_dims;
};

TrainConfig resolve_train_config(const std::string& preset, const std::string& config_path,
                                 const std::optional<std::uint64_t>& seed, const std::string& bwd_loss_dims,
                                 const json* inline_config = nullptr) {
  TrainConfig cfg;
  if (preset == "desk") cfg = TrainConfig::desk();
  else if (!preset.empty() && preset != "full") throw UsageError("unknown preset '" + preset + "'");
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config " + config_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError(config_path + " is not valid JSON: " + e.what());
    }
    cfg = train_config_from_json(j, cfg);
  }
  if (inline_config) cfg = train_config_from_json(*inline_config, cfg);
  if (seed) cfg.seed = *seed;
  if (!bwd_loss_dims.empty()) cfg.backward_loss_dims = bwd_loss_dims == "full" ? BackwardLossDims::full : BackwardLossDims::m;
  cfg.validate();
  return cfg;
}

json config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"noise_sd", c.noise_sd},
          {"seed", c.seed},
          {"loss_weight_fwd", c.forward_weight},
          {"loss_weight_bwd", c.backward_weight},
          {"bwd_loss_dims", c.backward_loss_dims == BackwardLossDims::m ? "m" : "full"},
          {"fwd_target", c.forward_target == ForwardTarget::clean ? "clean" : "perturbed"}};
}

TrainResult train_and_save(ModelKind kind, const Dictionary& train_in, const Dictionary& val, const TrainConfig& cfg,
                           bool desk, const fs::path& out_dir, RunManifest& manifest) {
  Dictionary tr = train_in;
  if (desk) {
    const auto seed = derive_seed(cfg.seed, "desk-subsample");
    tr = maybe_subsample(train_in, kDeskTrainingEntries, seed);
    manifest.seed("desk_subsample", seed);
    std::printf("desk preset: %ld of %ld training entries (stratified over FF x T1H2O)\n", static_cast<long>(tr.size()),
                static_cast<long>(train_in.size()));
  }
  fs::create_directories(out_dir);
  const auto t0 = Clock::now();
  auto result = train(kind, tr, val, cfg, [&](const TrainLogRow& r) {
    std::printf("  epoch %3d  loss_fwd %.4e  loss_bwd %.4e  val R2 %.5f\n", r.epoch, r.loss_forward, r.loss_backward,
                r.val_r2_mean);
    std::fflush(stdout);
  });
  save_checkpoint(result.best, (out_dir / "model.ckpt").string());
  write_train_log((out_dir / "train_log.csv").string(), result.log);
  manifest.output("model.ckpt");
  manifest.output("train_log.csv");
  std::printf("%s: best epoch %d, validation R2 %.6f, %ld parameters, %.1f s\n", to_string(kind), result.best_epoch,
              result.best_r2, static_cast<long>(result.best.parameter_count()), seconds_since(t0));
  return result;
}

int cmd_schedule(const std::string& out, std::size_t length, double fat_shift, RunManifest& m) {
  write_schedule_file(out, SequenceSchedule::reference(length), fat_shift);
  m.output(fs::path(out).filename().string());
  m.write(parent_or_dot(out));
  std::printf("wrote schedule with T=%zu to %s\n", length, out.c_str());
  return 0;
}

int cmd_grid(const std::string& preset, const std::string& out, RunManifest& m) {
  GridSpec g;
  if (preset == "train") g = GridSpec::default_training();
  else if (preset == "test") g = GridSpec::default_test();
  else throw UsageError("grid preset must be 'train' or 'test'");
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out);
  f << grid_to_json(g).dump(2) << '\n';
  f.close();
  m.output(fs::path(out).filename().string());
  m.write(parent_or_dot(out));
  std::printf("wrote %s grid (%zu entries) to %s\n", preset.c_str(), g.count(), out.c_str());
  return 0;
}

int cmd_simulate_dict(const std::string& grid_path, const std::string& schedule_path, const std::string& out,
                      std::optional<double> fat_shift, std::uint64_t seed, RunManifest& m) {
  const auto t0 = Clock::now();
  const auto grid = read_grid_file(grid_path);
  const auto sched = read_schedule_file(schedule_path);
  const double shift = fat_shift.value_or(sched.fat_shift_hz);
  m.input(grid_path);
  m.input(schedule_path);
  m.seed("master", seed);
  m.flag("fat_shift_hz", shift);
  const auto d = build_dictionary(grid, sched.schedule, shift, seed);
  save_dictionary(d, out);
  const auto stem = fs::path(out).filename().string();
  for (const char* ext : {".manifest", ".params.bin", ".fp.bin"}) m.output(stem + ext);
  m.write(parent_or_dot(out));
  std::printf("simulated dictionary: N=%ld T=%ld in %.2f s -> %s\n", static_cast<long>(d.size()),
              static_cast<long>(d.length()), seconds_since(t0), out.c_str());
  return 0;
}

int cmd_split_dict(const std::string& in, double fraction, std::uint64_t seed, const std::string& out_a,
                   const std::string& out_b, RunManifest& m) {
  const auto d = load_dictionary(in);
  m.input(in);
  m.seed("master", seed);
  const auto [a, b] = split_dictionary(d, fraction, seed);
  save_dictionary(a, out_a);
  save_dictionary(b, out_b);
  m.output(out_a);
  m.output(out_b);
  m.write(parent_or_dot(out_a));
  std::printf("split N=%ld into %ld (%s) and %ld (%s)\n", static_cast<long>(d.size()), static_cast<long>(a.size()),
              out_a.c_str(), static_cast<long>(b.size()), out_b.c_str());
  return 0;
}

int cmd_train(const TrainArgs& a, RunManifest& m) {
  const auto kind = model_kind_from_string(a.model);
  const auto cfg = resolve_train_config(a.preset, a.config_path, a.seed, a.bwd_loss_dims);
  const auto tr = load_dictionary(a.train_path);
  const auto val = load_dictionary(a.val_path);
  m.input(a.train_path);
  m.input(a.val_path);
  if (!a.config_path.empty()) m.input(a.config_path);
  m.seed("master", cfg.seed);
  m.seed("model", derive_seed(cfg.seed, "model"));
  m.flag("resolved_config", config_json(cfg));
  train_and_save(kind, tr, val, cfg, a.preset == "desk", a.out, m);
  m.write(a.out);
  return 0;
}

std::vector<TrainedModel> load_models(const std::vector<std::string>& paths, RunManifest& m) {
  std::vector<TrainedModel> out;
  for (const auto& p : paths) {
    out.push_back(load_checkpoint(p));
    m.input(p);
  }
  return out;
}

int cmd_evaluate(const std::vector<std::string>& model_paths, const std::string& test_path, const fs::path& out,
                 RunManifest& m) {
  const auto models = load_models(model_paths, m);
  const auto test = load_dictionary(test_path);
  m.input(test_path);
  const auto labels = model_labels(models);
  const Eigen::MatrixXd y = to_features(test.fingerprints);
  const Eigen::MatrixXd x = test.params.cast<double>();
  std::vector<std::pair<std::string, MetricsReport>> reports;
  for (std::size_t k = 0; k < models.size(); ++k) {
    require_compatible(models[k], test, labels[k]);
    reports.emplace_back(labels[k], metrics(x, models[k].estimate(y)));
    print_metrics(labels[k], reports.back().second);
  }
  fs::create_directories(out);
  write_metrics_csv((out / "metrics.csv").string(), reports);
  m.output("metrics.csv");
  m.write(out);
  return 0;
}

struct SweepArgs {
  std::vector<std::string> models;
  std::string test;
  std::string out;
  std::vector<double> levels;
  int repetitions = kDefaultSweepRepetitions;
  std::uint64_t seed = 0;
  std::size_t max_entries = 0;
};

int run_sweep(const std::vector<TrainedModel>& models, const Dictionary& test_full, const SweepArgs& a,
              RunManifest& m) {
  const auto subset_seed = derive_seed(a.seed, "sweep-subsample");
  const auto test = maybe_subsample(test_full, a.max_entries, subset_seed);
  const auto levels = a.levels.empty() ? default_snr_levels() : a.levels;
  const auto labels = model_labels(models);
  std::vector<NamedModel> named;
  for (std::size_t k = 0; k < models.size(); ++k) {
    require_compatible(models[k], test, labels[k]);
    named.push_back({labels[k], &models[k]});
  }
  m.seed("master", a.seed);
  if (test.size() != test_full.size()) m.seed("sweep_subsample", subset_seed);
  m.flag("levels", levels);
  m.flag("repetitions", a.repetitions);
  m.flag("entries", test.size());
  const double s_ref = signal_reference(test.manifest.schedule, test.manifest.fat_shift_hz);
  const auto t0 = Clock::now();
  const auto sweeps = snr_sweep(named, test, levels, a.repetitions, a.seed, s_ref);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_sweep_csv((out / "snr_sweep.csv").string(), sweeps);
  m.output("snr_sweep.csv");
  for (int p = 0; p < kNumParams; ++p) {
    const std::string name = std::string("snr_sweep_") + kParamNames[p] + ".svg";
    svg::write_sweep((out / name).string(), sweeps, p, std::string("MRE vs SNR: ") + kParamNames[p]);
    m.output(name);
  }
  std::printf("SNR sweep: %zu levels x %d repetitions x %ld entries, S=%.5f, %.1f s\n", levels.size(), a.repetitions,
              static_cast<long>(test.size()), s_ref, seconds_since(t0));
  for (const auto& s : sweeps)
    for (const auto& l : s.levels) {
      std::printf("  %-8s %5.1f dB", s.model.c_str(), l.snr_db);
      for (int p = 0; p < kNumParams; ++p) std::printf("  %s %.3f%%", kParamNames[p], l.mre_mean[p]);
      std::printf("\n");
    }
  return 0;
}

int cmd_snr_sweep(const SweepArgs& a, RunManifest& m) {
  const auto models = load_models(a.models, m);
  const auto test = load_dictionary(a.test);
  m.input(a.test);
  run_sweep(models, test, a, m);
  m.write(a.out);
  return 0;
}

int write_heatmap(const TrainedModel& ma, const TrainedModel& mb, const Dictionary& test, const std::string& param,
                  const fs::path& out, RunManifest& m) {
  const int index = heatmap_parameter_index(param);
  require_compatible(ma, test, "model a");
  require_compatible(mb, test, "model b");
  const auto hm = heatmap_diff(ma, mb, test, index);
  fs::create_directories(out);
  const std::string stem = "heatmap_" + param;
  write_heatmap_csv((out / (stem + ".csv")).string(), hm);
  svg::write_heatmap((out / (stem + ".svg")).string(), hm,
                     std::string("RE(") + to_string(ma.kind) + ") - RE(" + to_string(mb.kind) + "), " + param);
  m.output(stem + ".csv");
  m.output(stem + ".svg");
  std::printf("heat map %s: %zu x %zu cells, mean over FF >= 0.7: %+.4f pp\n", param.c_str(), hm.ff_values.size(),
              hm.t1_h2o_values.size(), hm.mean_for_ff_at_least(0.7 - 1e-6));
  return 0;
}

int cmd_heatmap(const std::string& a, const std::string& b, const std::string& param, const std::string& test_path,
                const std::string& out, RunManifest& m) {
  const auto models = load_models({a, b}, m);
  const auto test = load_dictionary(test_path);
  m.input(test_path);
  write_heatmap(models[0], models[1], test, param, out, m);
  m.write(out);
  return 0;
}

int write_correlation(const TrainedModel& model, const Dictionary& test, const fs::path& out, RunManifest& m) {
  require_compatible(model, test, "model");
  const auto r = fwd_bwd_correlate(model, test);
  fs::create_directories(out);
  write_correlation_csv((out / "correlation.csv").string(), test, r);
  m.output("correlation.csv");
  std::printf("forward/backward correlation over %ld entries: Spearman rho = %.6f\n", static_cast<long>(r.mre.size()),
              r.rho);
  return 0;
}

int cmd_correlate(const std::string& model_path, const std::string& test_path, const std::string& out, RunManifest& m) {
  const auto models = load_models({model_path}, m);
  const auto test = load_dictionary(test_path);
  m.input(test_path);
  write_correlation(models[0], test, out, m);
  m.write(out);
  return 0;
}

// ---------------------------------------------------------------------------
// run: the whole pipeline from one config file.

struct RunConfig {
  std::string schedule;  // path; empty = built-in reference schedule
  GridSpec train_grid = GridSpec::default_training();
  GridSpec test_grid = GridSpec::default_test();
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string preset = "desk";
  json train = json::object();
  std::vector<ModelKind> models = {ModelKind::inn, ModelKind::inn_bwd, ModelKind::fcn};
  std::vector<double> snr_levels = default_snr_levels();
  int snr_repetitions = kDefaultSweepRepetitions;
  std::size_t sweep_max_entries = 0;
  std::string out_dir;
};

GridSpec grid_entry(const json& v, const fs::path& base) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "train") return GridSpec::default_training();
    if (s == "test") return GridSpec::default_test();
    const auto p = fs::path(s).is_absolute() ? fs::path(s) : base / s;
    if (!fs::exists(p)) throw ConfigError("grid file " + p.string() + " does not exist");
    return read_grid_file(p.string());
  }
  return grid_from_json(v);
}

RunConfig load_run_config(const std::string& path) {
  static const std::vector<std::string> kKeys = {"schedule",   "train_grid",      "test_grid",      "val_fraction",
                                                 "seed",       "preset",          "train",          "models",
                                                 "snr_levels", "snr_repetitions", "sweep_max_entries", "out_dir"};
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end())
      throw ConfigError("unknown run config key '" + it.key() + "'");
  const fs::path base = parent_or_dot(path);
  RunConfig c;
  try {
    if (j.contains("schedule")) {
      const auto p = fs::path(j.at("schedule").get<std::string>());
      c.schedule = (p.is_absolute() ? p : base / p).string();
      if (!fs::exists(c.schedule)) throw ConfigError("schedule file " + c.schedule + " does not exist");
    }
    if (j.contains("train_grid")) c.train_grid = grid_entry(j.at("train_grid"), base);
    if (j.contains("test_grid")) c.test_grid = grid_entry(j.at("test_grid"), base);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.seed = j.value("seed", c.seed);
    c.preset = j.value("preset", c.preset);
    if (c.preset != "desk" && c.preset != "full") throw ConfigError("preset must be 'desk' or 'full'");
    if (j.contains("train")) {
      c.train = j.at("train");
      train_config_from_json(c.train);  // validate early
    }
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& s : j.at("models").get<std::vector<std::string>>()) c.models.push_back(model_kind_from_string(s));
      if (c.models.empty()) throw ConfigError("models must not be empty");
    }
    c.snr_levels = j.value("snr_levels", c.snr_levels);
    c.snr_repetitions = j.value("snr_repetitions", c.snr_repetitions);
    c.sweep_max_entries = j.value("sweep_max_entries", c.sweep_max_entries);
    c.out_dir = j.value("out_dir", std::string());
  } catch (const json::exception& e) {
    throw ConfigError("malformed run config: " + std::string(e.what()));
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (c.out_dir.empty()) throw ConfigError("run config needs out_dir");
  if (!fs::path(c.out_dir).is_absolute()) c.out_dir = (base / c.out_dir).string();
  if (c.snr_repetitions < 1) throw ConfigError("snr_repetitions must be at least 1");
  return c;
}

int cmd_run(const std::string& config_path, RunManifest& m) {
  const auto rc = load_run_config(config_path);
  m.input(config_path);
  const fs::path out(rc.out_dir);
  fs::create_directories(out);
  const auto t0 = Clock::now();

  ScheduleFile sched{SequenceSchedule::reference(), kDefaultFatShiftHz};
  if (!rc.schedule.empty()) {
    sched = read_schedule_file(rc.schedule);
    m.input(rc.schedule);
  }
  m.seed("master", rc.seed);
  m.flag("preset", rc.preset);

  const auto train_tuples = expand_grid(rc.train_grid);
  std::vector<TissueParams> tuples = train_tuples;
  if (rc.preset == "desk") {
    const auto s = derive_seed(rc.seed, "desk-subsample");
    tuples = stratified_subsample(train_tuples, kDeskTrainingEntries, s);
    m.seed("desk_subsample", s);
  }
  auto train_dict = build_dictionary(tuples, sched.schedule, sched.fat_shift_hz, rc.seed);
  train_dict.manifest.grid = rc.train_grid;
  const auto split_seed = derive_seed(rc.seed, "split");
  m.seed("split", split_seed);
  auto [val, test] = split_dictionary(build_dictionary(rc.test_grid, sched.schedule, sched.fat_shift_hz, rc.seed),
                                      rc.val_fraction, split_seed);
  save_dictionary(train_dict, (out / "dict" / "train").string());
  save_dictionary(val, (out / "dict" / "val").string());
  save_dictionary(test, (out / "dict" / "test").string());
  std::printf("dictionaries: train %ld, validation %ld, test %ld (T=%ld), %.1f s\n", static_cast<long>(train_dict.size()),
              static_cast<long>(val.size()), static_cast<long>(test.size()), static_cast<long>(test.length()),
              seconds_since(t0));

  const auto cfg = resolve_train_config(rc.preset, "", rc.seed, "", &rc.train);
  m.flag("resolved_config", config_json(cfg));
  std::vector<TrainedModel> models;
  for (auto kind : rc.models) {
    RunManifest sub("train", {});
    sub.seed("master", cfg.seed);
    sub.flag("resolved_config", config_json(cfg));
    const auto dir = out / "models" / to_string(kind);
    models.push_back(train_and_save(kind, train_dict, val, cfg, false, dir, sub).best);
    sub.write(dir);
  }

  const auto labels = model_labels(models);
  const Eigen::MatrixXd y = to_features(test.fingerprints);
  const Eigen::MatrixXd x = test.params.cast<double>();
  std::vector<std::pair<std::string, MetricsReport>> reports;
  for (std::size_t k = 0; k < models.size(); ++k) {
    reports.emplace_back(labels[k], metrics(x, models[k].estimate(y)));
    print_metrics(labels[k], reports.back().second);
  }
  write_metrics_csv((out / "metrics.csv").string(), reports);
  m.output("metrics.csv");

  SweepArgs sa;
  sa.levels = rc.snr_levels;
  sa.repetitions = rc.snr_repetitions;
  sa.seed = derive_seed(rc.seed, "sweep");
  sa.max_entries = rc.sweep_max_entries;
  sa.out = out.string();
  run_sweep(models, test, sa, m);

  const TrainedModel* inn = nullptr;
  const TrainedModel* bwd = nullptr;
  for (const auto& mm : models) {
    if (mm.kind == ModelKind::inn && !inn) inn = &mm;
    if (mm.kind == ModelKind::inn_bwd && !bwd) bwd = &mm;
  }
  if (inn && bwd)
    for (const char* p : {"t1_h2o", "t1_fat"}) write_heatmap(*bwd, *inn, test, p, out, m);
  if (inn) write_correlation(*inn, test, out, m);
  m.write(out);
  std::printf("pipeline finished in %.1f s -> %s\n", seconds_since(t0), out.string().c_str());
  return 0;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const StaleCacheError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mrfinn: invertible-network reconstruction for MR fingerprinting"};
  app.set_version_flag("--version", MRFINN_VERSION);
  app.require_subcommand(1);
  const std::vector<std::string> args(argv, argv + argc);
  const std::vector<std::string> kinds = {"inn", "inn_bwd", "fcn"};

  std::string out, grid_path, schedule_path, preset, dict_path, out_a, out_b, test_path, a_path, b_path, param;
  std::string config_path, model_path;
  std::size_t length = kDefaultLength;
  double fat_shift = kDefaultFatShiftHz, fraction = 0.2;
  std::optional<double> fat_shift_override;
  std::uint64_t seed = 0;
  std::vector<std::string> model_paths;

  auto* schedule = app.add_subcommand("schedule", "write the default acquisition schedule as JSON");
  schedule->add_option("--out", out, "output file")->required();
  schedule->add_option("--length", length, "number of repetitions T")->check(CLI::PositiveNumber);
  schedule->add_option("--fat-shift", fat_shift, "fat frequency offset (Hz)");

  auto* grid = app.add_subcommand("grid", "write a built-in grid specification as JSON");
  grid->add_option("--preset", preset, "train or test")->required()->check(CLI::IsMember({"train", "test"}));
  grid->add_option("--out", out, "output file")->required();

  auto* sim = app.add_subcommand("simulate-dict", "simulate a dictionary over a grid");
  sim->add_option("--grid", grid_path, "grid JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--schedule", schedule_path, "schedule JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out, "output base path (writes .manifest, .params.bin, .fp.bin)")->required();
  sim->add_option("--fat-shift", fat_shift_override, "override the schedule's fat offset (Hz)");
  sim->add_option("--seed", seed, "master seed recorded in the manifest");

  auto* split = app.add_subcommand("split-dict", "seeded random split of a dictionary");
  split->add_option("--dict", dict_path, "input dictionary base path")->required();
  split->add_option("--fraction", fraction, "share of entries in the first part")->check(CLI::Range(0.0, 1.0));
  split->add_option("--seed", seed, "master seed");
  split->add_option("--out-a", out_a, "first part (fraction)")->required();
  split->add_option("--out-b", out_b, "second part")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train one model and keep the best validation epoch");
  tr->add_option("--model", ta.model, "inn, inn_bwd or fcn")->required()->check(CLI::IsMember(kinds));
  tr->add_option("--train", ta.train_path, "training dictionary")->required();
  tr->add_option("--val", ta.val_path, "validation dictionary")->required();
  tr->add_option("--config", ta.config_path, "training config JSON")->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out, "output directory")->required();
  tr->add_option("--preset", ta.preset, "desk: 5000-entry stratified subset, 20 epochs, batch 50")
      ->check(CLI::IsMember({"desk", "full"}));
  tr->add_option("--seed", ta.seed, "master seed (overrides the config)");
  tr->add_option("--bwd-loss-dims", ta.bwd_loss_dims, "backward loss support: m or full")
      ->check(CLI::IsMember({"m", "full"}));

  auto* ev = app.add_subcommand("evaluate", "MAE, MRE and R2 on a test dictionary");
  ev->add_option("--models", model_paths, "checkpoints")->required();
  ev->add_option("--test", test_path, "test dictionary")->required();
  ev->add_option("--out", out, "output directory")->required();

  SweepArgs sa;
  auto* sw = app.add_subcommand("snr-sweep", "Monte-Carlo noise sweep");
  sw->add_option("--models", sa.models, "checkpoints")->required();
  sw->add_option("--test", sa.test, "test dictionary")->required();
  sw->add_option("--out", sa.out, "output directory")->required();
  sw->add_option("--levels", sa.levels, "SNR levels in dB (default 10..50 step 5)");
  sw->add_option("--repetitions", sa.repetitions, "noise realizations per level")->check(CLI::PositiveNumber);
  sw->add_option("--seed", sa.seed, "master seed");
  sw->add_option("--max-entries", sa.max_entries, "stratified test subset size (0 = all)");

  auto* hm = app.add_subcommand("heatmap", "relative-error difference RE(a) - RE(b) over FF x T1H2O");
  hm->add_option("--a", a_path, "checkpoint a")->required();
  hm->add_option("--b", b_path, "checkpoint b")->required();
  hm->add_option("--param", param, "t1_h2o or t1_fat")->required()->check(CLI::IsMember({"t1_h2o", "t1_fat"}));
  hm->add_option("--test", test_path, "test dictionary")->required();
  hm->add_option("--out", out, "output directory")->required();

  auto* co = app.add_subcommand("correlate", "backward error vs forward re-synthesis agreement");
  co->add_option("--model", model_path, "INN checkpoint")->required();
  co->add_option("--test", test_path, "test dictionary")->required();
  co->add_option("--out", out, "output directory")->required();

  auto* run = app.add_subcommand("run", "full pipeline from a run config");
  run->add_option("--config", config_path, "run config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  auto* sub = app.get_subcommands().front();
  RunManifest manifest(sub->get_name(), args);
  for (const auto* opt : sub->get_options()) {
    if (opt->get_name() == "--help" || opt->count() == 0) continue;
    const auto& res = opt->results();
    manifest.flag(opt->get_name(), res.size() == 1 ? json(res.front()) : json(res));
  }

  return guarded([&] {
    if (sub == schedule) return cmd_schedule(out, length, fat_shift, manifest);
    if (sub == grid) return cmd_grid(preset, out, manifest);
    if (sub == sim) return cmd_simulate_dict(grid_path, schedule_path, out, fat_shift_override, seed, manifest);
    if (sub == split) return cmd_split_dict(dict_path, fraction, seed, out_a, out_b, manifest);
    if (sub == tr) return cmd_train(ta, manifest);
    if (sub == ev) return cmd_evaluate(model_paths, test_path, out, manifest);
    if (sub == sw) return cmd_snr_sweep(sa, manifest);
    if (sub == hm) return cmd_heatmap(a_path, b_path, param, test_path, out, manifest);
    if (sub == co) return cmd_correlate(model_path, test_path, out, manifest);
    return cmd_run(config_path, manifest);
  });
}
