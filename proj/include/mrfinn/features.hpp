#pragma once

#include <array>
#include <cmath>
#include <complex>

#include <Eigen/Dense>

#include "mrfinn/errors.hpp"
#include "mrfinn/sequence.hpp"

namespace mrfinn {

/// Complex fingerprints (T x N) -> real features (2T x N): real parts on top,
/// imaginary parts below.
template <typename Complex>
Eigen::MatrixXd to_features(const Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>& fp) {
  const Eigen::Index t = fp.rows();
  Eigen::MatrixXd out(2 * t, fp.cols());
  out.topRows(t) = fp.real().template cast<double>();
  out.bottomRows(t) = fp.imag().template cast<double>();
  return out;
}

inline Eigen::MatrixXcd from_features(const Eigen::MatrixXd& features) {
  require_shape(features.rows() % 2 == 0, "from_features: feature count must be even");
  const Eigen::Index t = features.rows() / 2;
  Eigen::MatrixXcd out(t, features.cols());
  out.real() = features.topRows(t);
  out.imag() = features.bottomRows(t);
  return out;
}

/// Per-parameter affine map of the training range onto [0, 1].
struct ParamScaler {
  std::array<double, kNumParams> min{};
  std::array<double, kNumParams> max{};

  template <typename Derived>
  static ParamScaler fit(const Eigen::MatrixBase<Derived>& params) {
    require_shape(params.rows() == kNumParams, "ParamScaler::fit: expected 5 parameter rows");
    if (params.cols() < 2) throw InvalidArgument("ParamScaler::fit: need at least two entries");
    ParamScaler s;
    for (int p = 0; p < kNumParams; ++p) {
      s.min[p] = static_cast<double>(params.row(p).minCoeff());
      s.max[p] = static_cast<double>(params.row(p).maxCoeff());
      if (!(s.max[p] > s.min[p]))
        throw InvalidArgument(std::string("ParamScaler::fit: parameter ") + kParamNames[p] +
                              " is constant over the training set");
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    require_shape(x.rows() == kNumParams, "ParamScaler::apply: expected 5 parameter rows");
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (int p = 0; p < kNumParams; ++p)
      out.row(p) = (x.row(p).array() - min[p]) / (max[p] - min[p]);
    return out;
  }

  Eigen::MatrixXd invert(const Eigen::MatrixXd& x) const {
    require_shape(x.rows() == kNumParams, "ParamScaler::invert: expected 5 parameter rows");
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (int p = 0; p < kNumParams; ++p) out.row(p) = x.row(p).array() * (max[p] - min[p]) + min[p];
    return out;
  }

  bool operator==(const ParamScaler&) const = default;
};

}  // namespace mrfinn
