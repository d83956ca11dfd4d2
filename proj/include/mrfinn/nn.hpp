#pragma once

// Dense-network substrate. Every model keeps all of its trainable values in
// one flat Eigen::VectorXd; a DenseLayer is only a view description (shape,
// activation, offset) into that buffer. Gradients are a vector of the same
// length, which makes the optimizer and the finite-difference checker
// model-agnostic.
//
// Batches are column-major: one column per sample.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "mrfinn/errors.hpp"
#include "mrfinn/seeding.hpp"

namespace mrfinn::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation : std::uint32_t { relu = 0, linear = 1 };

struct DenseLayer {
  Index in = 0;
  Index out = 0;
  Activation activation = Activation::linear;
  Index offset = 0;  // weights (out x in, column-major) followed by biases (out)

  Index parameter_count() const { return out * in + out; }

  Eigen::Map<const MatrixXd> weights(const VectorXd& p) const {
    return {p.data() + offset, out, in};
  }
  Eigen::Map<MatrixXd> weights(VectorXd& p) const { return {p.data() + offset, out, in}; }
  Eigen::Map<const VectorXd> biases(const VectorXd& p) const {
    return {p.data() + offset + out * in, out};
  }
  Eigen::Map<VectorXd> biases(VectorXd& p) const { return {p.data() + offset + out * in, out}; }

  bool operator==(const DenseLayer&) const = default;
};

/// Appends a layer to a parameter layout whose current size is `cursor`.
inline DenseLayer allocate_dense(Index& cursor, Index in, Index out, Activation act) {
  DenseLayer layer{in, out, act, cursor};
  cursor += layer.parameter_count();
  return layer;
}

/// Uniform weights in +-sqrt(6 / (in + out)), zero biases.
inline void init_dense(const DenseLayer& layer, VectorXd& params, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  auto w = layer.weights(params);
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
  layer.biases(params).setZero();
}

struct DenseCache {
  MatrixXd input;
  MatrixXd preactivation;
};

inline MatrixXd dense_forward(const DenseLayer& layer, const VectorXd& params, const MatrixXd& input,
                              DenseCache* cache = nullptr) {
  require_shape(input.rows() == layer.in, "dense_forward: input has " + std::to_string(input.rows()) +
                                              " rows, layer expects " + std::to_string(layer.in));
  require_shape(params.size() >= layer.offset + layer.parameter_count(),
                "dense_forward: parameter buffer too small");
  MatrixXd z = layer.weights(params) * input;
  z.colwise() += layer.biases(params);
  if (cache) {
    cache->input = input;
    cache->preactivation = z;
  }
  if (layer.activation == Activation::relu) return z.cwiseMax(0.0);
  return z;
}

/// Accumulates parameter gradients into `grads` and returns the input gradient.
inline MatrixXd dense_backward(const DenseLayer& layer, const VectorXd& params, const DenseCache& cache,
                               const MatrixXd& upstream, VectorXd& grads) {
  require_shape(upstream.rows() == layer.out && upstream.cols() == cache.preactivation.cols(),
                "dense_backward: upstream shape does not match the cached forward pass");
  require_shape(grads.size() == params.size(), "dense_backward: gradient buffer size mismatch");
  MatrixXd delta = upstream;
  if (layer.activation == Activation::relu)
    delta = (cache.preactivation.array() > 0.0).select(upstream, 0.0);
  layer.weights(grads).noalias() += delta * cache.input.transpose();
  layer.biases(grads) += delta.rowwise().sum();
  return layer.weights(params).transpose() * delta;
}

struct LossResult {
  double loss = 0.0;
  MatrixXd grad;
};

/// Mean squared error over all entries.
inline LossResult mse(const MatrixXd& prediction, const MatrixXd& target) {
  require_shape(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
                "mse: prediction and target shapes differ");
  const auto n = static_cast<double>(prediction.size());
  MatrixXd diff = prediction - target;
  if (n == 0) return {0.0, diff};
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

/// Mean squared error restricted to the first `rows` rows; the remaining rows
/// get zero gradient.
inline LossResult mse_leading_rows(const MatrixXd& prediction, const MatrixXd& target, Index rows) {
  require_shape(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
                "mse: prediction and target shapes differ");
  require_shape(rows >= 0 && rows <= prediction.rows(), "mse: row count out of range");
  LossResult head = mse(prediction.topRows(rows), target.topRows(rows));
  LossResult out{head.loss, MatrixXd::Zero(prediction.rows(), prediction.cols())};
  out.grad.topRows(rows) = head.grad;
  return out;
}

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  VectorXd first_moment;
  VectorXd second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(Index parameter_count, AdamOptions opts)
      : options(opts),
        first_moment(VectorXd::Zero(parameter_count)),
        second_moment(VectorXd::Zero(parameter_count)) {}
};

/// One bias-corrected Adam update.
inline void adam_step(VectorXd& params, const VectorXd& grads, AdamState& state) {
  require_shape(params.size() == grads.size() && params.size() == state.first_moment.size() &&
                    params.size() == state.second_moment.size(),
                "adam_step: parameter, gradient and moment sizes differ");
  const auto& o = state.options;
  ++state.step;
  state.first_moment = o.beta1 * state.first_moment + (1.0 - o.beta1) * grads;
  state.second_moment = o.beta2 * state.second_moment + (1.0 - o.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  params.array() -= o.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + o.epsilon);
}

}  // namespace mrfinn::nn
