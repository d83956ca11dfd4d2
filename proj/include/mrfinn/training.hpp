#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mrfinn/dictionary.hpp"
#include "mrfinn/errors.hpp"
#include "mrfinn/features.hpp"
#include "mrfinn/model.hpp"
#include "mrfinn/nn.hpp"
#include "mrfinn/seeding.hpp"

namespace mrfinn {

enum class BackwardLossDims { m, full };
enum class ForwardTarget { perturbed, clean };

struct TrainConfig {
  double learning_rate = 1e-3;
  Eigen::Index batch_size = 200;
  int epochs = 80;
  double noise_sd = 0.003;
  std::uint64_t seed = 0;
  double forward_weight = 1.0;
  double backward_weight = 1.0;
  BackwardLossDims backward_loss_dims = BackwardLossDims::m;
  ForwardTarget forward_target = ForwardTarget::perturbed;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(forward_weight >= 0.0) || !(backward_weight >= 0.0))
      throw ConfigError("loss weights must be non-negative");
  }

  /// Desk-scale preset: 20 epochs, batch 50, learning rate 0.001.
  static TrainConfig desk() {
    TrainConfig c;
    c.epochs = 20;
    c.batch_size = 50;
    c.learning_rate = 1e-3;
    return c;
  }
};

inline constexpr std::size_t kDeskTrainingEntries = 5000;

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  static const std::vector<std::string> kKeys = {"learning_rate", "batch_size",     "epochs",
                                                 "noise_sd",      "seed",           "loss_weight_fwd",
                                                 "loss_weight_bwd", "bwd_loss_dims", "fwd_target"};
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end())
      throw ConfigError("unknown training config key '" + it.key() + "'");
  try {
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.epochs = j.value("epochs", base.epochs);
    base.noise_sd = j.value("noise_sd", base.noise_sd);
    base.seed = j.value("seed", base.seed);
    base.forward_weight = j.value("loss_weight_fwd", base.forward_weight);
    base.backward_weight = j.value("loss_weight_bwd", base.backward_weight);
    if (j.contains("bwd_loss_dims")) {
      const auto v = j.at("bwd_loss_dims").get<std::string>();
      if (v != "m" && v != "full") throw ConfigError("bwd_loss_dims must be 'm' or 'full'");
      base.backward_loss_dims = v == "m" ? BackwardLossDims::m : BackwardLossDims::full;
    }
    if (j.contains("fwd_target")) {
      const auto v = j.at("fwd_target").get<std::string>();
      if (v != "perturbed" && v != "clean") throw ConfigError("fwd_target must be 'perturbed' or 'clean'");
      base.forward_target = v == "clean" ? ForwardTarget::clean : ForwardTarget::perturbed;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  base.validate();
  return base;
}

/// Adds independent N(0, noise_sd^2) noise to every entry.
inline Eigen::MatrixXd perturb(const Eigen::MatrixXd& features, double noise_sd, Rng& rng) {
  if (!(noise_sd >= 0.0)) throw InvalidArgument("noise standard deviation must be non-negative");
  if (noise_sd == 0.0) return features;
  std::normal_distribution<double> dist(0.0, noise_sd);
  Eigen::MatrixXd out = features;
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += dist(rng);
  return out;
}

/// R^2 = 1 - SS_res / SS_tot per row (parameter); NaN where SS_tot is zero.
inline std::array<double, kNumParams> r2_per_param(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred) {
  require_shape(truth.rows() == kNumParams && pred.rows() == kNumParams && truth.cols() == pred.cols(),
                "r2_per_param: shape mismatch");
  std::array<double, kNumParams> out{};
  for (int p = 0; p < kNumParams; ++p) {
    const double mean = truth.row(p).mean();
    const double ss_tot = (truth.row(p).array() - mean).square().sum();
    const double ss_res = (truth.row(p) - pred.row(p)).squaredNorm();
    out[p] = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline double mean_ignoring_nan(const std::array<double, kNumParams>& v) {
  double sum = 0.0;
  int n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      sum += x;
      ++n;
    }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

struct BatchLoss {
  double forward = 0.0;
  double backward = 0.0;
  Eigen::VectorXd grads;
};

/// Losses and summed parameter gradients of one batch. `scaled_params` is
/// (5 x B); `clean` and `perturbed` are feature batches (2T x B). The forward
/// term is only evaluated for the jointly trained INN.
inline BatchLoss batch_loss(const TrainedModel& model, const Eigen::MatrixXd& scaled_params,
                            const Eigen::MatrixXd& clean, const Eigen::MatrixXd& perturbed,
                            const TrainConfig& cfg) {
  BatchLoss out;
  out.grads = Eigen::VectorXd::Zero(model.parameter_count());
  if (const auto* inn = std::get_if<InnModel>(&model.net)) {
    const Eigen::MatrixXd padded = pad_rows(scaled_params, inn->dim());
    if (model.kind == ModelKind::inn && cfg.forward_weight > 0.0) {
      InnCache cache;
      const Eigen::MatrixXd y_hat = inn->forward(padded, &cache);
      auto l = nn::mse(y_hat, cfg.forward_target == ForwardTarget::clean ? clean : perturbed);
      out.forward = l.loss;
      inn->backward(cache, cfg.forward_weight * l.grad, out.grads);
    }
    if (cfg.backward_weight > 0.0) {
      InnCache cache;
      const Eigen::MatrixXd x_hat = inn->inverse(perturbed, &cache);
      auto l = cfg.backward_loss_dims == BackwardLossDims::full ? nn::mse(x_hat, padded)
                                                              : nn::mse_leading_rows(x_hat, padded, kNumParams);
      out.backward = l.loss;
      inn->backward(cache, cfg.backward_weight * l.grad, out.grads);
    }
    return out;
  }
  const auto& fcn = std::get<FcnModel>(model.net);
  FcnCache cache;
  const Eigen::MatrixXd x_hat = fcn.forward(perturbed, &cache);
  auto l = nn::mse(x_hat, scaled_params);
  out.backward = l.loss;
  fcn.backward(cache, cfg.backward_weight * l.grad, out.grads);
  return out;
}

struct TrainLogRow {
  int epoch = 0;
  double loss_forward = 0.0;
  double loss_backward = 0.0;
  double val_r2_mean = 0.0;
  std::array<double, kNumParams> val_r2{};
};

struct TrainResult {
  TrainedModel best;
  int best_epoch = 0;
  double best_r2 = -std::numeric_limits<double>::infinity();
  std::vector<TrainLogRow> log;
};

inline TrainedModel make_model(ModelKind kind, Eigen::Index length, const ParamScaler& scaler, std::uint64_t seed) {
  TrainedModel m;
  m.kind = kind;
  m.scaler = scaler;
  const auto model_seed = derive_seed(seed, "model");
  if (kind == ModelKind::fcn)
    m.net = FcnModel::for_fingerprints(length, kNumParams, model_seed);
  else
    m.net = InnModel::for_fingerprints(length, model_seed);
  return m;
}

inline void require_same_schedule(const Dictionary& a, const Dictionary& b) {
  if (!(a.manifest.schedule == b.manifest.schedule) || a.manifest.fat_shift_hz != b.manifest.fat_shift_hz)
    throw InvalidArgument("dictionaries were simulated with different schedules");
}

/// Validation R^2 per parameter in scaled space on unperturbed fingerprints.
inline std::array<double, kNumParams> validation_r2(const TrainedModel& m, const Eigen::MatrixXd& val_features,
                                                    const Eigen::MatrixXd& val_scaled) {
  return r2_per_param(val_scaled, m.estimate_scaled(val_features));
}

using EpochCallback = std::function<void(const TrainLogRow&)>;

/// Mini-batch Adam training with per-epoch validation and best-R^2 selection
/// (ties go to the earliest epoch). The starting model may be supplied;
/// otherwise one is created from the config seed with a scaler fitted on the
/// training parameters.
inline TrainResult train(ModelKind kind, const Dictionary& train_dict, const Dictionary& val_dict,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                         std::optional<TrainedModel> initial = std::nullopt) {
  cfg.validate();
  require_same_schedule(train_dict, val_dict);
  if (train_dict.size() == 0 || val_dict.size() == 0) throw InvalidArgument("empty training or validation set");

  const Eigen::MatrixXd train_params = train_dict.params.cast<double>();
  TrainedModel model = initial ? std::move(*initial)
                               : make_model(kind, train_dict.length(), ParamScaler::fit(train_params), cfg.seed);
  model.kind = kind;
  if (model.fingerprint_length() != train_dict.length())
    throw ShapeError("model and dictionary disagree on fingerprint length");

  const Eigen::MatrixXd train_x = model.scaler.apply(train_params);
  const Eigen::MatrixXd train_y = to_features(train_dict.fingerprints);
  const Eigen::MatrixXd val_x = model.scaler.apply(val_dict.params.cast<double>());
  const Eigen::MatrixXd val_y = to_features(val_dict.fingerprints);

  nn::AdamState adam(model.parameter_count(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  TrainResult result;
  const Eigen::Index n = train_dict.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng noise_rng = make_rng(cfg.seed, "noise", static_cast<std::uint64_t>(epoch));

    double sum_f = 0.0, sum_b = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min(cfg.batch_size, n - start);
      Eigen::MatrixXd xb(kNumParams, b), yb(train_y.rows(), b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const auto idx = order[static_cast<std::size_t>(start + k)];
        xb.col(k) = train_x.col(idx);
        yb.col(k) = train_y.col(idx);
      }
      const Eigen::MatrixXd yp = perturb(yb, cfg.noise_sd, noise_rng);
      BatchLoss loss = batch_loss(model, xb, yb, yp, cfg);
      if (!std::isfinite(loss.forward) || !std::isfinite(loss.backward) || !loss.grads.allFinite())
        throw NumericalError("non-finite loss or gradient in epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches + 1));
      std::visit([&](auto& net) { nn::adam_step(net.mutable_parameters(), loss.grads, adam); }, model.net);
      sum_f += loss.forward;
      sum_b += loss.backward;
      ++batches;
    }

    TrainLogRow row;
    row.epoch = epoch;
    row.loss_forward = sum_f / batches;
    row.loss_backward = sum_b / batches;
    row.val_r2 = validation_r2(model, val_y, val_x);
    row.val_r2_mean = mean_ignoring_nan(row.val_r2);
    if (std::isnan(row.val_r2_mean)) throw NumericalError("validation R^2 undefined in epoch " + std::to_string(epoch));
    result.log.push_back(row);
    if (row.val_r2_mean > result.best_r2) {
      result.best_r2 = row.val_r2_mean;
      result.best_epoch = epoch;
      result.best = model;
      result.best.epoch = epoch;
    }
    if (on_epoch) on_epoch(row);
  }
  return result;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,train_loss_fwd,train_loss_bwd,val_r2_mean";
  for (const char* name : kParamNames) out << ",val_r2_" << name;
  out << '\n';
  for (const auto& r : log) {
    out << r.epoch << ',' << format_double(r.loss_forward) << ',' << format_double(r.loss_backward) << ','
        << format_double(r.val_r2_mean);
    for (double v : r.val_r2) out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace mrfinn
