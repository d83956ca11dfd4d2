#pragma once

// RealNVP-style invertible network: a stack of affine coupling blocks, each
// preceded by a fixed permutation of its input. Every block owns four
// subnets (s1, t1, s2, t2), each a 128-unit ReLU layer followed by a linear
// layer mapping d/2 -> d/2.
//
// Forward (u -> v), with [u1, u2] the permuted input split into halves:
//   v1 = u1 * exp(s2(u2)) + t2(u2)
//   v2 = u2 * exp(s1(v1)) + t1(v1)
// Inverse (v -> u):
//   u2 = (v2 - t1(v1)) * exp(-s1(v1))
//   u1 = (v1 - t2(u2)) * exp(-s2(u2))
// followed by the inverse permutation. Scale outputs pass through the soft
// clamp c * (2/pi) * atan(s / c) before exponentiation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "mrfinn/errors.hpp"
#include "mrfinn/nn.hpp"
#include "mrfinn/seeding.hpp"

namespace mrfinn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr Index kInnHiddenWidth = 128;
inline constexpr Index kInnBlocks = 2;
inline constexpr double kDefaultScaleClamp = 4.0;

enum class Direction { forward, inverse };

struct Subnet {
  nn::DenseLayer hidden;
  nn::DenseLayer output;

  bool operator==(const Subnet&) const = default;
};

struct SubnetCache {
  nn::DenseCache hidden;
  nn::DenseCache output;
};

inline MatrixXd subnet_forward(const Subnet& net, const VectorXd& params, const MatrixXd& x,
                               SubnetCache* cache) {
  MatrixXd h = nn::dense_forward(net.hidden, params, x, cache ? &cache->hidden : nullptr);
  return nn::dense_forward(net.output, params, h, cache ? &cache->output : nullptr);
}

inline MatrixXd subnet_backward(const Subnet& net, const VectorXd& params, const SubnetCache& cache,
                                const MatrixXd& upstream, VectorXd& grads) {
  MatrixXd g = nn::dense_backward(net.output, params, cache.output, upstream, grads);
  return nn::dense_backward(net.hidden, params, cache.hidden, g, grads);
}

struct CouplingBlock {
  Subnet s1, t1, s2, t2;
  std::vector<Index> permutation;  // permuted[i] = input[permutation[i]]

  Index dim() const { return static_cast<Index>(permutation.size()); }
  Index half() const { return dim() / 2; }

  bool operator==(const CouplingBlock&) const = default;
};

inline bool is_permutation_of_range(const std::vector<Index>& perm) {
  std::vector<bool> seen(perm.size(), false);
  for (Index p : perm) {
    if (p < 0 || p >= static_cast<Index>(perm.size()) || seen[static_cast<std::size_t>(p)]) return false;
    seen[static_cast<std::size_t>(p)] = true;
  }
  return true;
}

namespace detail {

inline double soft_clamp(double s, double c) { return c * (2.0 / std::numbers::pi) * std::atan(s / c); }

inline double soft_clamp_derivative(double s, double c) {
  const double r = s / c;
  return (2.0 / std::numbers::pi) / (1.0 + r * r);
}

inline MatrixXd gather_rows(const MatrixXd& m, const std::vector<Index>& perm) {
  MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Index>(i)) = m.row(perm[i]);
  return out;
}

inline MatrixXd scatter_rows(const MatrixXd& m, const std::vector<Index>& perm) {
  MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(perm[i]) = m.row(static_cast<Index>(i));
  return out;
}

}  // namespace detail

/// Intermediate values of one block evaluation. `first`/`second` hold the
/// block's permuted-domain halves (u1, u2); `exp1`/`exp2` hold exp(+a) on the
/// forward path and exp(-a) on the inverse path.
struct CouplingCache {
  Direction direction = Direction::forward;
  MatrixXd first, second;
  MatrixXd s1_raw, s2_raw;
  MatrixXd exp1, exp2;
  SubnetCache s1, t1, s2, t2;
};

inline MatrixXd coupling_forward(const CouplingBlock& block, const VectorXd& params, const MatrixXd& u,
                                 double clamp, CouplingCache* cache = nullptr) {
  require_shape(u.rows() == block.dim(), "coupling_forward: input dimension mismatch");
  const Index h = block.half();
  const MatrixXd p = detail::gather_rows(u, block.permutation);
  const MatrixXd u1 = p.topRows(h);
  const MatrixXd u2 = p.bottomRows(h);

  SubnetCache cs2, ct2, cs1, ct1;
  const MatrixXd s2 = subnet_forward(block.s2, params, u2, cache ? &cs2 : nullptr);
  const MatrixXd e2 = s2.unaryExpr([clamp](double s) { return std::exp(detail::soft_clamp(s, clamp)); });
  MatrixXd v(block.dim(), u.cols());
  v.topRows(h) = u1.cwiseProduct(e2) + subnet_forward(block.t2, params, u2, cache ? &ct2 : nullptr);
  const MatrixXd v1 = v.topRows(h);
  const MatrixXd s1 = subnet_forward(block.s1, params, v1, cache ? &cs1 : nullptr);
  const MatrixXd e1 = s1.unaryExpr([clamp](double s) { return std::exp(detail::soft_clamp(s, clamp)); });
  v.bottomRows(h) = u2.cwiseProduct(e1) + subnet_forward(block.t1, params, v1, cache ? &ct1 : nullptr);

  if (cache) {
    cache->direction = Direction::forward;
    cache->first = u1;
    cache->second = u2;
    cache->s1_raw = s1;
    cache->s2_raw = s2;
    cache->exp1 = e1;
    cache->exp2 = e2;
    cache->s1 = std::move(cs1);
    cache->t1 = std::move(ct1);
    cache->s2 = std::move(cs2);
    cache->t2 = std::move(ct2);
  }
  return v;
}

inline MatrixXd coupling_inverse(const CouplingBlock& block, const VectorXd& params, const MatrixXd& v,
                                 double clamp, CouplingCache* cache = nullptr) {
  require_shape(v.rows() == block.dim(), "coupling_inverse: input dimension mismatch");
  const Index h = block.half();
  const MatrixXd v1 = v.topRows(h);
  const MatrixXd v2 = v.bottomRows(h);

  SubnetCache cs2, ct2, cs1, ct1;
  const MatrixXd s1 = subnet_forward(block.s1, params, v1, cache ? &cs1 : nullptr);
  const MatrixXd ei1 = s1.unaryExpr([clamp](double s) { return std::exp(-detail::soft_clamp(s, clamp)); });
  MatrixXd p(block.dim(), v.cols());
  p.bottomRows(h) = (v2 - subnet_forward(block.t1, params, v1, cache ? &ct1 : nullptr)).cwiseProduct(ei1);
  const MatrixXd u2 = p.bottomRows(h);
  const MatrixXd s2 = subnet_forward(block.s2, params, u2, cache ? &cs2 : nullptr);
  const MatrixXd ei2 = s2.unaryExpr([clamp](double s) { return std::exp(-detail::soft_clamp(s, clamp)); });
  p.topRows(h) = (v1 - subnet_forward(block.t2, params, u2, cache ? &ct2 : nullptr)).cwiseProduct(ei2);

  if (cache) {
    cache->direction = Direction::inverse;
    cache->first = p.topRows(h);
    cache->second = u2;
    cache->s1_raw = s1;
    cache->s2_raw = s2;
    cache->exp1 = ei1;
    cache->exp2 = ei2;
    cache->s1 = std::move(cs1);
    cache->t1 = std::move(ct1);
    cache->s2 = std::move(cs2);
    cache->t2 = std::move(ct2);
  }
  return detail::scatter_rows(p, block.permutation);
}

/// Backpropagates through one block evaluation (either direction). Parameter
/// gradients accumulate into `grads`; the gradient w.r.t. the block input of
/// that direction is returned.
inline MatrixXd coupling_backward(const CouplingBlock& block, const VectorXd& params, double clamp,
                                  const CouplingCache& c, const MatrixXd& upstream, VectorXd& grads) {
  require_shape(upstream.rows() == block.dim() && upstream.cols() == c.first.cols(),
                "coupling_backward: upstream shape mismatch");
  const Index h = block.half();
  auto clamp_grad = [clamp](const MatrixXd& raw) {
    return raw.unaryExpr([clamp](double s) { return detail::soft_clamp_derivative(s, clamp); });
  };

  if (c.direction == Direction::forward) {
    const MatrixXd g_v1 = upstream.topRows(h);
    const MatrixXd g_v2 = upstream.bottomRows(h);
    MatrixXd g_u2 = g_v2.cwiseProduct(c.exp1);
    const MatrixXd g_s1 = g_v2.cwiseProduct(c.second).cwiseProduct(c.exp1).cwiseProduct(clamp_grad(c.s1_raw));
    MatrixXd g_v1_total = g_v1 + subnet_backward(block.s1, params, c.s1, g_s1, grads) +
                          subnet_backward(block.t1, params, c.t1, g_v2, grads);
    const MatrixXd g_u1 = g_v1_total.cwiseProduct(c.exp2);
    const MatrixXd g_s2 =
        g_v1_total.cwiseProduct(c.first).cwiseProduct(c.exp2).cwiseProduct(clamp_grad(c.s2_raw));
    g_u2 += subnet_backward(block.s2, params, c.s2, g_s2, grads) +
            subnet_backward(block.t2, params, c.t2, g_v1_total, grads);
    MatrixXd g_p(block.dim(), upstream.cols());
    g_p.topRows(h) = g_u1;
    g_p.bottomRows(h) = g_u2;
    return detail::scatter_rows(g_p, block.permutation);
  }

  const MatrixXd g_p = detail::gather_rows(upstream, block.permutation);
  const MatrixXd g_u1 = g_p.topRows(h);
  MatrixXd g_v1 = g_u1.cwiseProduct(c.exp2);
  const MatrixXd g_s2 = -g_u1.cwiseProduct(c.first).cwiseProduct(clamp_grad(c.s2_raw));
  const MatrixXd g_u2 = g_p.bottomRows(h) + subnet_backward(block.s2, params, c.s2, g_s2, grads) +
                        subnet_backward(block.t2, params, c.t2, -g_v1, grads);
  const MatrixXd g_v2 = g_u2.cwiseProduct(c.exp1);
  const MatrixXd g_s1 = -g_u2.cwiseProduct(c.second).cwiseProduct(clamp_grad(c.s1_raw));
  g_v1 += subnet_backward(block.s1, params, c.s1, g_s1, grads) +
          subnet_backward(block.t1, params, c.t1, -g_v2, grads);
  MatrixXd g_v(block.dim(), upstream.cols());
  g_v.topRows(h) = g_v1;
  g_v.bottomRows(h) = g_v2;
  return g_v;
}

struct InnCache {
  Direction direction = Direction::forward;
  std::uint64_t generation = 0;
  std::vector<CouplingCache> blocks;
};

class InnModel {
 public:
  InnModel() = default;

  InnModel(Index dim, Index num_blocks, Index hidden, std::uint64_t seed,
           double clamp = kDefaultScaleClamp)
      : dim_(dim), hidden_(hidden), clamp_(clamp), seed_(seed) {
    if (dim <= 0 || dim % 2 != 0) throw InvalidArgument("INN dimension must be positive and even");
    if (num_blocks <= 0 || hidden <= 0) throw InvalidArgument("INN needs at least one block and unit");
    if (!(clamp > 0.0)) throw InvalidArgument("scale clamp must be positive");
    Index cursor = 0;
    const Index h = dim / 2;
    for (Index b = 0; b < num_blocks; ++b) {
      CouplingBlock block;
      for (Subnet* net : {&block.s1, &block.t1, &block.s2, &block.t2}) {
        net->hidden = nn::allocate_dense(cursor, h, hidden, nn::Activation::relu);
        net->output = nn::allocate_dense(cursor, hidden, h, nn::Activation::linear);
      }
      block.permutation.resize(static_cast<std::size_t>(dim));
      std::iota(block.permutation.begin(), block.permutation.end(), Index{0});
      Rng prng = make_rng(seed, "permutation", static_cast<std::uint64_t>(b));
      std::shuffle(block.permutation.begin(), block.permutation.end(), prng);
      blocks_.push_back(std::move(block));
    }
    params_ = VectorXd::Zero(cursor);
    Rng rng = make_rng(seed, "init");
    for (const auto& block : blocks_)
      for (const Subnet* net : {&block.s1, &block.t1, &block.s2, &block.t2}) {
        nn::init_dense(net->hidden, params_, rng);
        nn::init_dense(net->output, params_, rng);
      }
  }

  /// The fingerprint-sized model: d = 2T, two blocks, 128 hidden units.
  static InnModel for_fingerprints(Index length, std::uint64_t seed) {
    return InnModel(2 * length, kInnBlocks, kInnHiddenWidth, seed);
  }

  Index dim() const { return dim_; }
  Index hidden() const { return hidden_; }
  double clamp() const { return clamp_; }
  std::uint64_t seed() const { return seed_; }
  Index parameter_count() const { return params_.size(); }
  const std::vector<CouplingBlock>& blocks() const { return blocks_; }

  const VectorXd& parameters() const { return params_; }
  /// Mutable access invalidates caches taken before it.
  VectorXd& mutable_parameters() {
    ++generation_;
    return params_;
  }
  void set_parameters(const VectorXd& p) {
    require_shape(p.size() == params_.size(), "InnModel::set_parameters: size mismatch");
    mutable_parameters() = p;
  }

  void set_permutation(std::size_t block, std::vector<Index> perm) {
    if (perm.size() != static_cast<std::size_t>(dim_) || !is_permutation_of_range(perm))
      throw InvalidArgument("permutation must be a bijection on 0..d-1");
    blocks_.at(block).permutation = std::move(perm);
    ++generation_;
  }

  MatrixXd forward(const MatrixXd& u, InnCache* cache = nullptr) const {
    require_shape(u.rows() == dim_, "InnModel::forward: expected " + std::to_string(dim_) + " rows");
    if (cache) start_cache(*cache, Direction::forward);
    MatrixXd x = u;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      x = coupling_forward(blocks_[b], params_, x, clamp_, cache ? &cache->blocks[b] : nullptr);
    return x;
  }

  MatrixXd inverse(const MatrixXd& v, InnCache* cache = nullptr) const {
    require_shape(v.rows() == dim_, "InnModel::inverse: expected " + std::to_string(dim_) + " rows");
    if (cache) start_cache(*cache, Direction::inverse);
    MatrixXd x = v;
    for (std::size_t b = blocks_.size(); b-- > 0;)
      x = coupling_inverse(blocks_[b], params_, x, clamp_, cache ? &cache->blocks[b] : nullptr);
    return x;
  }

  /// Gradient of <upstream, output> for the evaluation recorded in `cache`.
  /// Parameter gradients accumulate into `grads`, so losses from both
  /// directions can be summed before one optimizer step.
  MatrixXd backward(const InnCache& cache, const MatrixXd& upstream, VectorXd& grads) const {
    if (cache.generation != generation_ || cache.blocks.size() != blocks_.size())
      throw StaleCacheError("InnModel::backward: cache predates the current parameters");
    require_shape(grads.size() == params_.size(), "InnModel::backward: gradient buffer size mismatch");
    MatrixXd g = upstream;
    if (cache.direction == Direction::forward) {
      for (std::size_t b = blocks_.size(); b-- > 0;)
        g = coupling_backward(blocks_[b], params_, clamp_, cache.blocks[b], g, grads);
    } else {
      for (std::size_t b = 0; b < blocks_.size(); ++b)
        g = coupling_backward(blocks_[b], params_, clamp_, cache.blocks[b], g, grads);
    }
    return g;
  }

  /// Restores a model from persisted pieces; used by checkpoint loading.
  static InnModel from_parts(Index dim, Index hidden, double clamp, std::uint64_t seed,
                             std::vector<std::vector<Index>> permutations, VectorXd params) {
    InnModel m(dim, static_cast<Index>(permutations.size()), hidden, seed, clamp);
    for (std::size_t b = 0; b < permutations.size(); ++b) m.set_permutation(b, std::move(permutations[b]));
    m.set_parameters(params);
    return m;
  }

 private:
  void start_cache(InnCache& cache, Direction d) const {
    cache.direction = d;
    cache.generation = generation_;
    cache.blocks.assign(blocks_.size(), CouplingCache{});
  }

  Index dim_ = 0;
  Index hidden_ = 0;
  double clamp_ = kDefaultScaleClamp;
  std::uint64_t seed_ = 0;
  std::vector<CouplingBlock> blocks_;
  VectorXd params_;
  std::uint64_t generation_ = 0;
};

/// Zero-pads an (m x B) batch to (dim x B).
inline MatrixXd pad_rows(const MatrixXd& x, Index dim) {
  require_shape(x.rows() <= dim, "pad_rows: input taller than target dimension");
  MatrixXd out = MatrixXd::Zero(dim, x.cols());
  out.topRows(x.rows()) = x;
  return out;
}

}  // namespace mrfinn
