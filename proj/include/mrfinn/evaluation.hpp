#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mrfinn/dictionary.hpp"
#include "mrfinn/errors.hpp"
#include "mrfinn/features.hpp"
#include "mrfinn/model.hpp"
#include "mrfinn/seeding.hpp"
#include "mrfinn/training.hpp"

namespace mrfinn {

/// Entries whose reference value is smaller than this (in parameter units)
/// are left out of relative-error statistics.
inline constexpr double kRelativeErrorGuard = 1e-9;

/// Relative errors in percent, (5 x N); NaN where the reference is below the guard.
inline Eigen::MatrixXd relative_errors(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred) {
  require_shape(truth.rows() == pred.rows() && truth.cols() == pred.cols(), "relative_errors: shape mismatch");
  Eigen::MatrixXd out(truth.rows(), truth.cols());
  for (Eigen::Index j = 0; j < truth.cols(); ++j)
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      const double ref = std::abs(truth(i, j));
      out(i, j) = ref < kRelativeErrorGuard ? std::numeric_limits<double>::quiet_NaN()
                                            : 100.0 * std::abs(pred(i, j) - truth(i, j)) / ref;
    }
  return out;
}

struct ParamMetrics {
  double mae_mean = 0.0;
  double mae_sd = 0.0;
  double mre_mean = 0.0;  // percent
  double mre_sd = 0.0;
  double r2 = 0.0;
  Eigen::Index mre_count = 0;
  Eigen::Index mre_excluded = 0;
};

struct MetricsReport {
  std::array<ParamMetrics, kNumParams> params{};
  Eigen::Index entries = 0;
};

namespace detail {

/// Mean and population standard deviation of the non-NaN values.
struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  Eigen::Index count = 0;
};

template <typename Range>
Moments moments(const Range& values) {
  Moments m;
  double sum = 0.0;
  for (double v : values)
    if (!std::isnan(v)) {
      sum += v;
      ++m.count;
    }
  if (m.count == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), 0};
  m.mean = sum / static_cast<double>(m.count);
  double ss = 0.0;
  for (double v : values)
    if (!std::isnan(v)) ss += (v - m.mean) * (v - m.mean);
  m.sd = std::sqrt(ss / static_cast<double>(m.count));
  return m;
}

}  // namespace detail

/// MAE (parameter units), MRE (percent) and R^2 per parameter. Inputs are
/// (5 x N) in original parameter units.
inline MetricsReport metrics(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred) {
  require_shape(truth.rows() == kNumParams && pred.rows() == kNumParams && truth.cols() == pred.cols(),
                "metrics: expected matching (5 x N) matrices");
  MetricsReport r;
  r.entries = truth.cols();
  const Eigen::MatrixXd abs_err = (pred - truth).cwiseAbs();
  const Eigen::MatrixXd rel = relative_errors(truth, pred);
  const auto r2 = r2_per_param(truth, pred);
  for (int p = 0; p < kNumParams; ++p) {
    const Eigen::VectorXd ae = abs_err.row(p).transpose();
    const Eigen::VectorXd re = rel.row(p).transpose();
    const auto a = detail::moments(ae);
    const auto m = detail::moments(re);
    r.params[p] = {a.mean, a.sd, m.mean, m.sd, r2[p], m.count, truth.cols() - m.count};
  }
  return r;
}

inline double snr_db(double signal_ref, double noise_sd) {
  if (!(signal_ref > 0.0) || !(noise_sd > 0.0)) throw InvalidArgument("SNR needs positive signal and noise levels");
  return 20.0 * std::log10(signal_ref / noise_sd);
}

/// Inverse of snr_db; an infinite SNR maps to zero noise.
inline double noise_for_snr(double signal_ref, double snr) {
  if (!(signal_ref > 0.0)) throw InvalidArgument("SNR needs a positive signal level");
  if (std::isnan(snr)) throw InvalidArgument("SNR level is NaN");
  if (std::isinf(snr) && snr > 0) return 0.0;
  return signal_ref / std::pow(10.0, snr / 20.0);
}

/// Healthy skeletal muscle: FF 0, T1H2O 1400 ms, T1fat 300 ms, on resonance, nominal B1.
inline constexpr TissueParams kHealthyMuscle{0.0, 1400.0, 300.0, 0.0, 1.0};

/// Mean fingerprint magnitude of the reference tissue under the schedule.
inline double signal_reference(const SequenceSchedule& schedule, double fat_shift_hz,
                               const TissueParams& tissue = kHealthyMuscle) {
  return simulate_fingerprint(tissue, schedule, fat_shift_hz).cwiseAbs().mean();
}

inline const std::vector<double>& default_snr_levels() {
  static const std::vector<double> levels = {10, 15, 20, 25, 30, 35, 40, 45, 50};
  return levels;
}

inline constexpr int kDefaultSweepRepetitions = 100;

struct SnrLevelResult {
  double snr_db = 0.0;
  double noise_sd = 0.0;
  std::array<double, kNumParams> mre_mean{};
  std::array<double, kNumParams> mre_sd{};
};

struct SnrSweepResult {
  std::string model;
  int repetitions = 0;
  std::vector<SnrLevelResult> levels;
};

struct NamedModel {
  std::string label;
  const TrainedModel* model = nullptr;
};

/// Monte-Carlo noise sweep. For every level and repetition one noise
/// realization of the whole test set is drawn (seeded by level index and
/// repetition) and fed to every model. MRE mean and standard deviation pool
/// all entries of all repetitions.
inline std::vector<SnrSweepResult> snr_sweep(const std::vector<NamedModel>& models, const Dictionary& test,
                                             const std::vector<double>& levels, int repetitions,
                                             std::uint64_t seed, double signal_ref) {
  if (levels.empty()) throw InvalidArgument("SNR sweep needs at least one level");
  if (repetitions < 1) throw InvalidArgument("SNR sweep needs at least one repetition");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (!(levels[i] > levels[i - 1])) throw InvalidArgument("SNR levels must be strictly increasing");
  for (const auto& m : models)
    if (m.model->fingerprint_length() != test.length())
      throw ShapeError("model " + m.label + " expects a different fingerprint length");

  const Eigen::MatrixXd clean = to_features(test.fingerprints);
  const Eigen::MatrixXd truth = test.params.cast<double>();
  std::vector<SnrSweepResult> out(models.size());
  for (std::size_t k = 0; k < models.size(); ++k) {
    out[k].model = models[k].label;
    out[k].repetitions = repetitions;
  }

  for (std::size_t li = 0; li < levels.size(); ++li) {
    const double sd = noise_for_snr(signal_ref, levels[li]);
    std::vector<std::array<std::vector<double>, kNumParams>> pooled(models.size());
    for (int rep = 0; rep < repetitions; ++rep) {
      Rng rng = make_rng(derive_seed(seed, "snr-level", li), "repetition", static_cast<std::uint64_t>(rep));
      const Eigen::MatrixXd noisy = perturb(clean, sd, rng);
      for (std::size_t k = 0; k < models.size(); ++k) {
        const Eigen::MatrixXd rel = relative_errors(truth, models[k].model->estimate(noisy));
        for (int p = 0; p < kNumParams; ++p)
          pooled[k][p].insert(pooled[k][p].end(), rel.row(p).begin(), rel.row(p).end());
      }
    }
    for (std::size_t k = 0; k < models.size(); ++k) {
      SnrLevelResult lr;
      lr.snr_db = levels[li];
      lr.noise_sd = sd;
      for (int p = 0; p < kNumParams; ++p) {
        const auto m = detail::moments(pooled[k][p]);
        lr.mre_mean[p] = m.mean;
        lr.mre_sd[p] = m.sd;
      }
      out[k].levels.push_back(lr);
    }
  }
  return out;
}

/// Relative-error differences binned over the (FF, T1H2O) grid of the test set.
/// cells(i, j) = mean RE_a - mean RE_b (percentage points) over entries with
/// ff_values[i] and t1_h2o_values[j]; positive means model b is better.
struct HeatMap {
  int parameter = 1;
  std::vector<double> ff_values;
  std::vector<double> t1_h2o_values;
  Eigen::MatrixXd cells;
  Eigen::MatrixXi counts;

  /// Mean over populated cells of the rows with FF >= ff_min.
  double mean_for_ff_at_least(double ff_min) const {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < ff_values.size(); ++i) {
      if (ff_values[i] < ff_min) continue;
      for (Eigen::Index j = 0; j < cells.cols(); ++j)
        if (counts(static_cast<Eigen::Index>(i), j) > 0) {
          sum += cells(static_cast<Eigen::Index>(i), j);
          ++n;
        }
    }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
  }
};

inline int heatmap_parameter_index(const std::string& name) {
  if (name == "t1_h2o") return 1;
  if (name == "t1_fat") return 2;
  throw InvalidArgument("heat maps are defined for t1_h2o and t1_fat only, not '" + name + "'");
}

inline HeatMap heatmap_from_predictions(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred_a,
                                        const Eigen::MatrixXd& pred_b, int parameter) {
  if (parameter != 1 && parameter != 2) throw InvalidArgument("heat map parameter must be t1_h2o or t1_fat");
  require_shape(truth.rows() == kNumParams && pred_a.rows() == kNumParams && pred_b.rows() == kNumParams &&
                    truth.cols() == pred_a.cols() && truth.cols() == pred_b.cols(),
                "heatmap: shape mismatch");
  HeatMap hm;
  hm.parameter = parameter;
  std::map<double, Eigen::Index> ff_index, t1_index;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    ff_index.emplace(truth(0, j), 0);
    t1_index.emplace(truth(1, j), 0);
  }
  for (auto& [v, i] : ff_index) {
    i = static_cast<Eigen::Index>(hm.ff_values.size());
    hm.ff_values.push_back(v);
  }
  for (auto& [v, i] : t1_index) {
    i = static_cast<Eigen::Index>(hm.t1_h2o_values.size());
    hm.t1_h2o_values.push_back(v);
  }
  const auto rows = static_cast<Eigen::Index>(hm.ff_values.size());
  const auto cols = static_cast<Eigen::Index>(hm.t1_h2o_values.size());
  Eigen::MatrixXd sum_a = Eigen::MatrixXd::Zero(rows, cols), sum_b = Eigen::MatrixXd::Zero(rows, cols);
  hm.counts = Eigen::MatrixXi::Zero(rows, cols);
  const Eigen::MatrixXd rel_a = relative_errors(truth, pred_a);
  const Eigen::MatrixXd rel_b = relative_errors(truth, pred_b);
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    if (std::isnan(rel_a(parameter, j))) continue;
    const auto r = ff_index.at(truth(0, j));
    const auto c = t1_index.at(truth(1, j));
    sum_a(r, c) += rel_a(parameter, j);
    sum_b(r, c) += rel_b(parameter, j);
    ++hm.counts(r, c);
  }
  hm.cells = Eigen::MatrixXd::Constant(rows, cols, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      if (hm.counts(r, c) > 0) hm.cells(r, c) = (sum_a(r, c) - sum_b(r, c)) / hm.counts(r, c);
  return hm;
}

inline HeatMap heatmap_diff(const TrainedModel& a, const TrainedModel& b, const Dictionary& test, int parameter) {
  const Eigen::MatrixXd y = to_features(test.fingerprints);
  return heatmap_from_predictions(test.params.cast<double>(), a.estimate(y), b.estimate(y), parameter);
}

/// Ranks starting at 1; ties receive the average of the ranks they span.
inline Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Eigen::VectorXd ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation: Pearson correlation of average ranks.
inline double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  require_shape(a.size() == b.size(), "spearman: vectors differ in length");
  if (a.size() < 3) throw InvalidArgument("spearman needs at least three pairs");
  if (!a.allFinite() || !b.allFinite()) throw NumericalError("spearman: non-finite input");
  const Eigen::VectorXd ra = average_ranks(a);
  const Eigen::VectorXd rb = average_ranks(b);
  const Eigen::VectorXd ca = ra.array() - ra.mean();
  const Eigen::VectorXd cb = rb.array() - rb.mean();
  const double denom = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
  if (denom == 0.0) throw NumericalError("spearman: correlation undefined for a constant input");
  return ca.dot(cb) / denom;
}

/// |<y, y_hat>| of the L2-normalized complex fingerprints, in [0, 1].
inline double normalized_inner_product(const Eigen::VectorXcd& y, const Eigen::VectorXcd& y_hat) {
  const double ny = y.norm(), nh = y_hat.norm();
  if (ny == 0.0 || nh == 0.0) throw NumericalError("inner product of a zero-norm fingerprint");
  return std::abs(y.dot(y_hat)) / (ny * nh);
}

struct CorrelationResult {
  Eigen::VectorXd mre;            // per entry, mean over the parameters' relative errors (percent)
  Eigen::VectorXd inner_product;  // per entry, normalized |<y, y_hat>|
  double rho = 0.0;
};

/// Backward estimate x_hat = inverse(y), then forward re-synthesis
/// y_hat = forward(pad(x_hat)); relates the two errors per entry.
inline CorrelationResult fwd_bwd_correlate(const TrainedModel& model, const Dictionary& test) {
  const auto* inn = std::get_if<InnModel>(&model.net);
  if (!inn) throw InvalidArgument("forward/backward correlation needs an invertible model");
  if (model.fingerprint_length() != test.length()) throw ShapeError("model and test set disagree on T");
  const Eigen::MatrixXd y = to_features(test.fingerprints);
  const Eigen::MatrixXd x_hat_scaled = inn->inverse(y).topRows(kNumParams);
  const Eigen::MatrixXd y_hat = inn->forward(pad_rows(x_hat_scaled, inn->dim()));
  const Eigen::MatrixXd rel = relative_errors(test.params.cast<double>(), model.scaler.invert(x_hat_scaled));
  const Eigen::MatrixXcd yc = from_features(y), hc = from_features(y_hat);

  CorrelationResult r;
  r.mre.resize(test.size());
  r.inner_product.resize(test.size());
  for (Eigen::Index j = 0; j < test.size(); ++j) {
    const Eigen::VectorXd col = rel.col(j);
    r.mre[j] = detail::moments(col).mean;
    r.inner_product[j] = normalized_inner_product(yc.col(j), hc.col(j));
  }
  r.rho = spearman(r.mre, r.inner_product);
  return r;
}

// ---------------------------------------------------------------------------
// CSV reports

inline void write_metrics_csv(const std::string& path, const std::vector<std::pair<std::string, MetricsReport>>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "model,parameter,mae_mean,mae_sd,mre_mean_pct,mre_sd_pct,r2,entries,mre_excluded\n";
  for (const auto& [label, r] : reports)
    for (int p = 0; p < kNumParams; ++p) {
      const auto& m = r.params[p];
      out << label << ',' << kParamNames[p] << ',' << format_double(m.mae_mean) << ',' << format_double(m.mae_sd) << ','
          << format_double(m.mre_mean) << ',' << format_double(m.mre_sd) << ',' << format_double(m.r2) << ','
          << r.entries << ',' << m.mre_excluded << '\n';
    }
}

inline void write_sweep_csv(const std::string& path, const std::vector<SnrSweepResult>& sweeps) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "model,snr_db,noise_sd,repetitions,parameter,mre_mean_pct,mre_sd_pct\n";
  for (const auto& s : sweeps)
    for (const auto& l : s.levels)
      for (int p = 0; p < kNumParams; ++p)
        out << s.model << ',' << format_double(l.snr_db) << ',' << format_double(l.noise_sd) << ',' << s.repetitions
            << ',' << kParamNames[p] << ',' << format_double(l.mre_mean[p]) << ',' << format_double(l.mre_sd[p]) << '\n';
}

inline void write_heatmap_csv(const std::string& path, const HeatMap& hm) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "parameter,ff,t1_h2o,diff_pct,entries\n";
  for (std::size_t i = 0; i < hm.ff_values.size(); ++i)
    for (std::size_t j = 0; j < hm.t1_h2o_values.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(j);
      out << kParamNames[hm.parameter] << ',' << format_double(hm.ff_values[i]) << ','
          << format_double(hm.t1_h2o_values[j]) << ',' << (hm.counts(r, c) ? format_double(hm.cells(r, c)) : "")
          << ',' << hm.counts(r, c) << '\n';
    }
}

inline void write_correlation_csv(const std::string& path, const Dictionary& test, const CorrelationResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "index";
  for (const char* n : kParamNames) out << ',' << n;
  out << ",mre_pct,inner_product\n";
  for (Eigen::Index j = 0; j < r.mre.size(); ++j) {
    out << j;
    for (int p = 0; p < kNumParams; ++p) out << ',' << format_double(test.params(p, j));
    out << ',' << format_double(r.mre[j]) << ',' << format_double(r.inner_product[j]) << '\n';
  }
}

}  // namespace mrfinn
