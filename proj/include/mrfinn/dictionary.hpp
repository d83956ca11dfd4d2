#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mrfinn/errors.hpp"
#include "mrfinn/seeding.hpp"
#include "mrfinn/sequence.hpp"

namespace mrfinn {

static_assert(std::endian::native == std::endian::little,
              "dictionary payloads are written in native order and assume a little-endian host");

inline constexpr const char* kDictionaryFormatVersion = "1";

/// One (start : increment : stop) run of grid values.
struct Segment {
  double start = 0.0;
  double increment = 1.0;
  double stop = 0.0;

  void validate() const {
    if (!(increment > 0.0)) throw GridError("segment increment must be positive");
    if (!(start <= stop)) throw GridError("segment start must not exceed stop");
    if (!std::isfinite(start) || !std::isfinite(stop)) throw GridError("segment bounds not finite");
  }

  /// start + k*increment for every k whose value does not pass stop + increment/2.
  std::vector<double> expand() const {
    validate();
    std::vector<double> values;
    const double limit = stop + increment / 2.0;
    for (std::int64_t k = 0;; ++k) {
      const double v = start + static_cast<double>(k) * increment;
      if (v > limit) break;
      values.push_back(v);
    }
    return values;
  }

  bool operator==(const Segment&) const = default;
};

/// Per-parameter segment lists, in the fixed order (FF, T1H2O, T1fat, delta f, B1).
struct GridSpec {
  std::array<std::vector<Segment>, kNumParams> segments;

  void validate() const {
    for (int p = 0; p < kNumParams; ++p) {
      if (segments[p].empty())
        throw GridError(std::string("no segments for parameter ") + kParamNames[p]);
      for (const auto& s : segments[p]) s.validate();
    }
  }

  /// Values of one parameter, ascending; duplicates between segments are kept.
  std::vector<double> values(int param) const {
    std::vector<double> out;
    for (const auto& s : segments[param]) {
      auto v = s.expand();
      out.insert(out.end(), v.begin(), v.end());
    }
    std::stable_sort(out.begin(), out.end());
    return out;
  }

  std::size_t count() const {
    validate();
    std::size_t n = 1;
    for (int p = 0; p < kNumParams; ++p) n *= values(p).size();
    return n;
  }

  bool operator==(const GridSpec&) const = default;

  /// Training grid: 11 x 20 x 9 x 25 x 8 = 396000 entries.
  static GridSpec default_training() {
    GridSpec g;
    g.segments[0] = {{0.0, 0.1, 1.0}};
    g.segments[1] = {{500, 100, 1700}, {1900, 200, 3100}};
    g.segments[2] = {{200, 25, 400}};
    g.segments[3] = {{-120, 10, 120}};
    g.segments[4] = {{0.3, 0.1, 1.0}};
    return g;
  }

  /// Validation/test grid: 10 x 10 x 4 x 12 x 7 = 33600 entries.
  static GridSpec default_test() {
    GridSpec g;
    g.segments[0] = {{0.05, 0.1, 0.95}};
    g.segments[1] = {{550, 200, 1750}, {2150, 400, 2950}};
    g.segments[2] = {{215, 50, 365}};
    g.segments[3] = {{-115, 20, 105}};
    g.segments[4] = {{0.35, 0.1, 0.95}};
    return g;
  }
};

inline nlohmann::json grid_to_json(const GridSpec& g) {
  nlohmann::json j = nlohmann::json::object();
  for (int p = 0; p < kNumParams; ++p) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : g.segments[p]) segs.push_back({s.start, s.increment, s.stop});
    j[kParamNames[p]] = segs;
  }
  return j;
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw GridError("grid document must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(kParamNames.begin(), kParamNames.end(),
                     [&](const char* n) { return it.key() == n; }) == kParamNames.end())
      throw GridError("unknown grid key '" + it.key() + "'");
  }
  GridSpec g;
  try {
    for (int p = 0; p < kNumParams; ++p) {
      for (const auto& seg : j.at(kParamNames[p])) {
        if (!seg.is_array() || seg.size() != 3)
          throw GridError(std::string("segment of ") + kParamNames[p] + " must be [start, inc, stop]");
        g.segments[p].push_back({seg[0].get<double>(), seg[1].get<double>(), seg[2].get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw GridError(std::string("malformed grid: ") + e.what());
  }
  g.validate();
  return g;
}

inline GridSpec read_grid_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw GridError("grid file " + path + " is not valid JSON: " + e.what());
  }
  return grid_from_json(j);
}

/// Cartesian product in lexicographic order: FF varies slowest, B1 fastest.
inline std::vector<TissueParams> expand_grid(const GridSpec& spec) {
  spec.validate();
  std::array<std::vector<double>, kNumParams> axes;
  std::size_t n = 1;
  for (int p = 0; p < kNumParams; ++p) {
    axes[p] = spec.values(p);
    n *= axes[p].size();
  }
  std::vector<TissueParams> out;
  out.reserve(n);
  std::array<std::size_t, kNumParams> idx{};
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, kNumParams> a{};
    for (int p = 0; p < kNumParams; ++p) a[p] = axes[p][idx[p]];
    out.push_back(TissueParams::from_array(a));
    for (int p = kNumParams - 1; p >= 0; --p) {
      if (++idx[p] < axes[p].size()) break;
      idx[p] = 0;
    }
  }
  return out;
}

struct DictionaryManifest {
  std::string format_version = kDictionaryFormatVersion;
  std::optional<GridSpec> grid;
  SequenceSchedule schedule;
  double fat_shift_hz = kDefaultFatShiftHz;
  std::uint64_t seed = 0;
  std::string origin = "grid";
};

/// Parameters (M x N) and fingerprints (T x N), one column per entry, held in
/// single precision to match the on-disk representation exactly.
struct Dictionary {
  Eigen::MatrixXf params;
  Eigen::MatrixXcf fingerprints;
  DictionaryManifest manifest;

  Eigen::Index size() const { return params.cols(); }
  Eigen::Index length() const { return fingerprints.rows(); }

  TissueParams entry(Eigen::Index i) const {
    std::array<double, kNumParams> a{};
    for (int p = 0; p < kNumParams; ++p) a[p] = params(p, i);
    return TissueParams::from_array(a);
  }

  void validate() const {
    if (params.rows() != kNumParams) throw ShapeError("dictionary params must have 5 rows");
    if (params.cols() != fingerprints.cols())
      throw ShapeError("dictionary params and fingerprints differ in entry count");
    for (Eigen::Index i = 0; i < size(); ++i) entry(i).validate();
  }

  /// Sub-dictionary of the given columns, in the given order.
  Dictionary select(const std::vector<Eigen::Index>& indices, std::string origin) const {
    Dictionary d;
    d.params.resize(params.rows(), static_cast<Eigen::Index>(indices.size()));
    d.fingerprints.resize(fingerprints.rows(), static_cast<Eigen::Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
      d.params.col(static_cast<Eigen::Index>(k)) = params.col(indices[k]);
      d.fingerprints.col(static_cast<Eigen::Index>(k)) = fingerprints.col(indices[k]);
    }
    d.manifest = manifest;
    d.manifest.origin = std::move(origin);
    return d;
  }
};

/// Simulates one fingerprint per tuple. Tuples are rounded to single precision
/// first so that the stored parameters reproduce the stored fingerprints.
inline Dictionary build_dictionary(const std::vector<TissueParams>& tuples,
                                   const SequenceSchedule& schedule, double fat_shift_hz,
                                   std::uint64_t seed = 0) {
  schedule.validate();
  const auto n = static_cast<Eigen::Index>(tuples.size());
  const auto t = static_cast<Eigen::Index>(schedule.length());
  Dictionary d;
  d.params.resize(kNumParams, n);
  d.fingerprints.resize(t, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto a = tuples[static_cast<std::size_t>(i)].to_array();
    for (int p = 0; p < kNumParams; ++p) {
      d.params(p, i) = static_cast<float>(a[p]);
      a[p] = static_cast<double>(d.params(p, i));
    }
    d.fingerprints.col(i) =
        simulate_fingerprint(TissueParams::from_array(a), schedule, fat_shift_hz).cast<std::complex<float>>();
  }
  d.manifest.schedule = schedule;
  d.manifest.fat_shift_hz = fat_shift_hz;
  d.manifest.seed = seed;
  return d;
}

inline Dictionary build_dictionary(const GridSpec& spec, const SequenceSchedule& schedule,
                                   double fat_shift_hz, std::uint64_t seed = 0) {
  Dictionary d = build_dictionary(expand_grid(spec), schedule, fat_shift_hz, seed);
  d.manifest.grid = spec;
  return d;
}

/// Seeded uniform shuffle; the first part receives round(fraction * N) entries.
/// Both parts keep the input's relative order.
inline std::pair<Dictionary, Dictionary> split_dictionary(const Dictionary& d, double fraction,
                                                          std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw SplitError("split fraction must lie in (0, 1)");
  const Eigen::Index n = d.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng = make_rng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<Eigen::Index> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<Eigen::Index> second(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {d.select(first, "split:first"), d.select(second, "split:second")};
}

/// Subset stratified over (FF, T1H2O) cells: every cell contributes the same
/// number of randomly chosen entries, about target / cells.
inline std::vector<Eigen::Index> stratified_subsample_indices(const Eigen::MatrixXf& params,
                                                              std::size_t target,
                                                              std::uint64_t seed) {
  std::map<std::pair<float, float>, std::vector<Eigen::Index>> cells;
  for (Eigen::Index i = 0; i < params.cols(); ++i) cells[{params(0, i), params(1, i)}].push_back(i);
  if (cells.empty()) return {};
  const auto per_cell = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(target) /
                                               static_cast<double>(cells.size()))));
  Rng rng = make_rng(seed, "stratified-subsample");
  std::vector<Eigen::Index> chosen;
  for (auto& [key, members] : cells) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = std::min(per_cell, members.size());
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

inline std::vector<TissueParams> stratified_subsample(const std::vector<TissueParams>& tuples,
                                                      std::size_t target, std::uint64_t seed) {
  Eigen::MatrixXf p(kNumParams, static_cast<Eigen::Index>(tuples.size()));
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    const auto a = tuples[i].to_array();
    for (int k = 0; k < kNumParams; ++k) p(k, static_cast<Eigen::Index>(i)) = static_cast<float>(a[k]);
  }
  std::vector<TissueParams> out;
  for (auto i : stratified_subsample_indices(p, target, seed)) out.push_back(tuples[static_cast<std::size_t>(i)]);
  return out;
}

inline Dictionary stratified_subsample(const Dictionary& d, std::size_t target, std::uint64_t seed) {
  return d.select(stratified_subsample_indices(d.params, target, seed), "stratified-subsample");
}

// ---------------------------------------------------------------------------
// Persistence: <base>.manifest (JSON), <base>.params.bin, <base>.fp.bin.
// Payloads are little-endian float32, row-major per entry; fingerprints are
// interleaved (real, imag).

namespace detail {

inline std::string file_stem(const std::string& base) {
  return std::filesystem::path(base).filename().string();
}

inline void write_floats(const std::string& path, const float* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  if (!out) throw IoError("short write to " + path);
}

inline std::vector<float> read_floats(const std::string& path, std::size_t expected) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path);
  if (bytes != expected * sizeof(float))
    throw SizeMismatchError(path + ": payload has " + std::to_string(bytes) + " bytes, manifest implies " +
                            std::to_string(expected * sizeof(float)));
  std::vector<float> v(expected);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expected * sizeof(float)));
  if (!in) throw IoError("short read from " + path);
  return v;
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const Dictionary& d, const std::string& stem) {
  nlohmann::json j;
  j["format_version"] = d.manifest.format_version;
  j["entries"] = d.size();
  j["length"] = d.length();
  j["num_params"] = kNumParams;
  j["param_order"] = kParamNames;
  j["dtype"] = "float32-le";
  j["params_file"] = stem + ".params.bin";
  j["fingerprints_file"] = stem + ".fp.bin";
  j["fingerprint_layout"] = "row-major, interleaved real/imag";
  j["seed"] = d.manifest.seed;
  j["origin"] = d.manifest.origin;
  j["grid"] = d.manifest.grid ? grid_to_json(*d.manifest.grid) : nlohmann::json(nullptr);
  j["schedule"] = schedule_to_json(d.manifest.schedule, d.manifest.fat_shift_hz);
  return j;
}

inline void save_dictionary(const Dictionary& d, const std::string& base) {
  const auto parent = std::filesystem::path(base).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string stem = detail::file_stem(base);
  {
    std::ofstream out(base + ".manifest");
    if (!out) throw IoError("cannot write " + base + ".manifest");
    out << manifest_to_json(d, stem).dump(2) << '\n';
  }
  // Column-major (5 x N) storage is row-major per entry already.
  detail::write_floats(base + ".params.bin", d.params.data(), static_cast<std::size_t>(d.params.size()));
  detail::write_floats(base + ".fp.bin", reinterpret_cast<const float*>(d.fingerprints.data()),
                       static_cast<std::size_t>(d.fingerprints.size()) * 2);
}

inline Dictionary load_dictionary(const std::string& base) {
  std::ifstream in(base + ".manifest");
  if (!in) throw IoError("cannot open " + base + ".manifest");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(base + ".manifest is not valid JSON: " + e.what());
  }
  Dictionary d;
  try {
    const auto version = j.at("format_version").get<std::string>();
    if (version != kDictionaryFormatVersion)
      throw VersionError("dictionary format version '" + version + "' unsupported (expected " +
                         kDictionaryFormatVersion + ")");
    if (j.at("num_params").get<int>() != kNumParams) throw FormatError("manifest num_params must be 5");
    const auto n = j.at("entries").get<Eigen::Index>();
    const auto t = j.at("length").get<Eigen::Index>();
    d.manifest.seed = j.at("seed").get<std::uint64_t>();
    d.manifest.origin = j.value("origin", "");
    if (!j.at("grid").is_null()) d.manifest.grid = grid_from_json(j.at("grid"));
    const auto sched = schedule_from_json(j.at("schedule"));
    d.manifest.schedule = sched.schedule;
    d.manifest.fat_shift_hz = sched.fat_shift_hz;
    if (d.manifest.schedule.length() != static_cast<std::size_t>(t))
      throw SizeMismatchError("manifest length disagrees with its schedule");

    const auto dir = std::filesystem::path(base).parent_path();
    const auto params_path = (dir / j.at("params_file").get<std::string>()).string();
    const auto fp_path = (dir / j.at("fingerprints_file").get<std::string>()).string();
    const auto pv = detail::read_floats(params_path, static_cast<std::size_t>(n * kNumParams));
    const auto fv = detail::read_floats(fp_path, static_cast<std::size_t>(n * t * 2));
    d.params = Eigen::Map<const Eigen::MatrixXf>(pv.data(), kNumParams, n);
    d.fingerprints.resize(t, n);
    std::copy(fv.begin(), fv.end(), reinterpret_cast<float*>(d.fingerprints.data()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(base + ".manifest malformed: " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(base + ".manifest: " + e.what());
  }
  return d;
}

}  // namespace mrfinn
