#pragma once

// Two-pool (water/fat) longitudinal-recursion signal model with ideal spoiling.
//
// Per repetition k the emitted signal is
//   Mz_pre(k) * sin(b1 * alpha_k) * exp(i * 2*pi * delta_f * TE_k / 1000)
// after which Mz is multiplied by cos(b1 * alpha_k) and relaxes towards the
// equilibrium value 1 with time constant t1 over TR_k. Equilibrium
// magnetization is 1, which fixes the signal unit.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mrfinn/errors.hpp"

namespace mrfinn {

inline constexpr int kNumParams = 5;
inline constexpr int kDefaultLength = 175;
inline constexpr double kDefaultFatShiftHz = -420.0;

using Fingerprint = Eigen::VectorXcd;

/// Parameter order used everywhere: FF, T1H2O, T1fat, delta f, B1.
inline constexpr std::array<const char*, kNumParams> kParamNames = {"ff", "t1_h2o", "t1_fat",
                                                                     "delta_f", "b1"};

struct TissueParams {
  double ff = 0.0;       // fraction in [0, 1]
  double t1_h2o = 1.0;   // ms
  double t1_fat = 1.0;   // ms
  double delta_f = 0.0;  // Hz
  double b1 = 1.0;       // flip-angle efficacy

  std::array<double, kNumParams> to_array() const { return {ff, t1_h2o, t1_fat, delta_f, b1}; }

  static TissueParams from_array(const std::array<double, kNumParams>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }

  void validate() const {
    if (!(ff >= 0.0 && ff <= 1.0)) throw InvalidParameter("ff must lie in [0, 1]");
    if (!(t1_h2o > 0.0) || !(t1_fat > 0.0)) throw InvalidParameter("T1 values must be positive");
    if (!(b1 > 0.0)) throw InvalidParameter("b1 must be positive");
    if (!std::isfinite(delta_f) || !std::isfinite(t1_h2o) || !std::isfinite(t1_fat) ||
        !std::isfinite(b1))
      throw InvalidParameter("tissue parameters must be finite");
  }

  bool operator==(const TissueParams&) const = default;
};

struct SequenceSchedule {
  std::vector<double> flip_angles_deg;
  std::vector<double> echo_times_ms;
  std::vector<double> repetition_times_ms;
  bool invert_first = false;

  std::size_t length() const { return flip_angles_deg.size(); }

  void validate() const {
    const std::size_t t = flip_angles_deg.size();
    if (t == 0) throw InvalidSchedule("schedule must have at least one repetition");
    if (echo_times_ms.size() != t || repetition_times_ms.size() != t)
      throw InvalidSchedule("flip angle, echo time and repetition time arrays differ in length");
    for (std::size_t k = 0; k < t; ++k) {
      const double fa = flip_angles_deg[k];
      if (!(fa > 0.0 && fa <= 180.0))
        throw InvalidSchedule("flip angle " + std::to_string(k) + " outside (0, 180]");
      if (!(echo_times_ms[k] >= 0.0 && echo_times_ms[k] <= repetition_times_ms[k]))
        throw InvalidSchedule("echo time " + std::to_string(k) + " outside [0, TR]");
    }
  }

  bool operator==(const SequenceSchedule&) const = default;

  /// Constant flip/TE/TR schedule, mainly for steady-state checks.
  static SequenceSchedule constant(std::size_t length, double flip_deg, double te_ms, double tr_ms,
                                   bool invert_first = false) {
    SequenceSchedule s;
    s.flip_angles_deg.assign(length, flip_deg);
    s.echo_times_ms.assign(length, te_ms);
    s.repetition_times_ms.assign(length, tr_ms);
    s.invert_first = invert_first;
    return s;
  }

  /// Reference schedule: triangular flip ramp 5 -> 70 -> 5 degrees, TE
  /// alternating 1.0 / 2.3 ms, TR linearly spaced over [8, 12] ms, with an
  /// initial inversion.
  static SequenceSchedule reference(std::size_t length = kDefaultLength) {
    SequenceSchedule s;
    s.invert_first = true;
    s.flip_angles_deg.resize(length);
    s.echo_times_ms.resize(length);
    s.repetition_times_ms.resize(length);
    const double half = std::max<double>(1.0, static_cast<double>(length - 1) / 2.0);
    for (std::size_t k = 0; k < length; ++k) {
      const double pos = static_cast<double>(k);
      const double ramp = 1.0 - std::abs(pos - half) / half;
      s.flip_angles_deg[k] = 5.0 + 65.0 * std::clamp(ramp, 0.0, 1.0);
      s.echo_times_ms[k] = (k % 2 == 0) ? 1.0 : 2.3;
      s.repetition_times_ms[k] =
          length > 1 ? 8.0 + 4.0 * pos / static_cast<double>(length - 1) : 10.0;
    }
    return s;
  }
};

/// Single-pool fingerprint.
inline Fingerprint simulate_pool(double t1_ms, double delta_f_hz, double b1,
                                 const SequenceSchedule& schedule) {
  if (!(t1_ms > 0.0) || !std::isfinite(t1_ms)) throw InvalidParameter("t1 must be positive");
  if (!(b1 > 0.0) || !std::isfinite(b1)) throw InvalidParameter("b1 must be positive");
  schedule.validate();

  constexpr double kDegToRad = std::numbers::pi / 180.0;
  const std::size_t t = schedule.length();
  Fingerprint out(static_cast<Eigen::Index>(t));
  double mz = schedule.invert_first ? -1.0 : 1.0;
  for (std::size_t k = 0; k < t; ++k) {
    const double alpha = b1 * schedule.flip_angles_deg[k] * kDegToRad;
    const double phase = 2.0 * std::numbers::pi * delta_f_hz * schedule.echo_times_ms[k] / 1000.0;
    const double mag = mz * std::sin(alpha);
    out[static_cast<Eigen::Index>(k)] = {mag * std::cos(phase), mag * std::sin(phase)};
    mz *= std::cos(alpha);
    const double e1 = std::exp(-schedule.repetition_times_ms[k] / t1_ms);
    mz = 1.0 - (1.0 - mz) * e1;
  }
  return out;
}

/// Water and fat pools mixed linearly by ff; the fat pool is shifted by fat_shift_hz.
inline Fingerprint simulate_fingerprint(const TissueParams& params, const SequenceSchedule& schedule,
                                        double fat_shift_hz = kDefaultFatShiftHz) {
  params.validate();
  const Fingerprint water = simulate_pool(params.t1_h2o, params.delta_f, params.b1, schedule);
  const Fingerprint fat =
      simulate_pool(params.t1_fat, params.delta_f + fat_shift_hz, params.b1, schedule);
  // Scalar loop: Eigen's packet path uses FMA and peels by heap alignment,
  // which would make stored dictionaries differ between processes in the last ulp.
  Fingerprint out(water.size());
  for (Eigen::Index k = 0; k < out.size(); ++k) out[k] = (1.0 - params.ff) * water[k] + params.ff * fat[k];
  return out;
}

/// On-disk schedule document: the three arrays, the inversion flag and the fat shift.
struct ScheduleFile {
  SequenceSchedule schedule;
  double fat_shift_hz = kDefaultFatShiftHz;
};

inline nlohmann::json schedule_to_json(const SequenceSchedule& s, double fat_shift_hz) {
  return {{"flip_angles_deg", s.flip_angles_deg},
          {"echo_times_ms", s.echo_times_ms},
          {"repetition_times_ms", s.repetition_times_ms},
          {"invert_first", s.invert_first},
          {"fat_shift_hz", fat_shift_hz}};
}

inline ScheduleFile schedule_from_json(const nlohmann::json& j) {
  static const std::array<std::string, 5> kKeys = {"flip_angles_deg", "echo_times_ms",
                                                   "repetition_times_ms", "invert_first",
                                                   "fat_shift_hz"};
  if (!j.is_object()) throw InvalidSchedule("schedule document must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end())
      throw InvalidSchedule("unknown schedule key '" + it.key() + "'");
  }
  ScheduleFile f;
  try {
    f.schedule.flip_angles_deg = j.at("flip_angles_deg").get<std::vector<double>>();
    f.schedule.echo_times_ms = j.at("echo_times_ms").get<std::vector<double>>();
    f.schedule.repetition_times_ms = j.at("repetition_times_ms").get<std::vector<double>>();
    f.schedule.invert_first = j.value("invert_first", false);
    f.fat_shift_hz = j.value("fat_shift_hz", kDefaultFatShiftHz);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSchedule(std::string("malformed schedule: ") + e.what());
  }
  f.schedule.validate();
  return f;
}

inline ScheduleFile read_schedule_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schedule file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSchedule("schedule file " + path + " is not valid JSON: " + e.what());
  }
  return schedule_from_json(j);
}

inline void write_schedule_file(const std::string& path, const SequenceSchedule& s,
                                double fat_shift_hz) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schedule file " + path);
  out << schedule_to_json(s, fat_shift_hz).dump(2) << '\n';
}

}  // namespace mrfinn
