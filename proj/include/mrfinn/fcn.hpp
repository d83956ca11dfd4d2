#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mrfinn/errors.hpp"
#include "mrfinn/nn.hpp"
#include "mrfinn/seeding.hpp"

namespace mrfinn {

inline constexpr Eigen::Index kFcnHiddenWidth = 300;

struct FcnCache {
  std::uint64_t generation = 0;
  std::vector<nn::DenseCache> layers;
};

/// Fully-connected regression baseline: in -> hidden (relu) -> hidden (relu) -> out (linear).
class FcnModel {
 public:
  FcnModel() = default;

  FcnModel(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, std::uint64_t seed) : seed_(seed) {
    if (in <= 0 || hidden <= 0 || out <= 0) throw InvalidArgument("FCN layer sizes must be positive");
    Eigen::Index cursor = 0;
    layers_.push_back(nn::allocate_dense(cursor, in, hidden, nn::Activation::relu));
    layers_.push_back(nn::allocate_dense(cursor, hidden, hidden, nn::Activation::relu));
    layers_.push_back(nn::allocate_dense(cursor, hidden, out, nn::Activation::linear));
    params_ = Eigen::VectorXd::Zero(cursor);
    Rng rng = make_rng(seed, "init");
    for (const auto& l : layers_) nn::init_dense(l, params_, rng);
  }

  static FcnModel for_fingerprints(Eigen::Index length, Eigen::Index num_params, std::uint64_t seed) {
    return FcnModel(2 * length, kFcnHiddenWidth, num_params, seed);
  }

  Eigen::Index input_dim() const { return layers_.front().in; }
  Eigen::Index hidden() const { return layers_.front().out; }
  Eigen::Index output_dim() const { return layers_.back().out; }
  std::uint64_t seed() const { return seed_; }
  Eigen::Index parameter_count() const { return params_.size(); }
  const std::vector<nn::DenseLayer>& layers() const { return layers_; }

  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& mutable_parameters() {
    ++generation_;
    return params_;
  }
  void set_parameters(const Eigen::VectorXd& p) {
    require_shape(p.size() == params_.size(), "FcnModel::set_parameters: size mismatch");
    mutable_parameters() = p;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, FcnCache* cache = nullptr) const {
    require_shape(x.rows() == input_dim(), "FcnModel::forward: expected " + std::to_string(input_dim()) + " rows");
    if (cache) {
      cache->generation = generation_;
      cache->layers.assign(layers_.size(), nn::DenseCache{});
    }
    Eigen::MatrixXd h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      h = nn::dense_forward(layers_[i], params_, h, cache ? &cache->layers[i] : nullptr);
    return h;
  }

  Eigen::MatrixXd backward(const FcnCache& cache, const Eigen::MatrixXd& upstream, Eigen::VectorXd& grads) const {
    if (cache.generation != generation_ || cache.layers.size() != layers_.size())
      throw StaleCacheError("FcnModel::backward: cache predates the current parameters");
    Eigen::MatrixXd g = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;)
      g = nn::dense_backward(layers_[i], params_, cache.layers[i], g, grads);
    return g;
  }

 private:
  std::uint64_t seed_ = 0;
  std::vector<nn::DenseLayer> layers_;
  Eigen::VectorXd params_;
  std::uint64_t generation_ = 0;
};

}  // namespace mrfinn
