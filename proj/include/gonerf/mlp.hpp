#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "gonerf/errors.hpp"

namespace gonerf {

// Fully connected network, ReLU between layers, linear output. Batches are
// column-major: one sample per column.
class Mlp {
 public:
  struct Layer {
    Eigen::MatrixXf weight;  // out x in
    Eigen::VectorXf bias;
  };

  struct Cache {
    std::vector<Eigen::MatrixXf> inputs;  // input to each layer (post-activation)
  };

  struct Gradients {
    std::vector<Layer> layers;
  };

  Mlp() = default;

  Mlp(const std::vector<int>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw InvalidInput("Mlp needs at least input and output sizes");
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      Layer layer;
      const int in = sizes[i], out = sizes[i + 1];
      // He-uniform for ReLU layers.
      const float bound = std::sqrt(6.0f / static_cast<float>(in));
      std::uniform_real_distribution<float> dist(-bound, bound);
      layer.weight.resize(out, in);
      for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = dist(rng);
      layer.bias.setZero(out);
      layers_.push_back(std::move(layer));
    }
  }

  int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Eigen::MatrixXf forward(const Eigen::MatrixXf& x, Cache* cache = nullptr) const {
    Eigen::MatrixXf h = x;
    if (cache) cache->inputs.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (cache) cache->inputs.push_back(h);
      Eigen::MatrixXf z = layers_[i].weight * h;
      z.colwise() += layers_[i].bias;
      if (i + 1 < layers_.size()) z = z.cwiseMax(0.0f);
      h = std::move(z);
    }
    return h;
  }

  // Accumulates parameter gradients into `grads`; returns d loss / d input.
  Eigen::MatrixXf backward(const Cache& cache, const Eigen::MatrixXf& d_out, Gradients& grads) const {
    Eigen::MatrixXf d = d_out;
    for (std::size_t ii = layers_.size(); ii-- > 0;) {
      const Eigen::MatrixXf& in = cache.inputs[ii];
      grads.layers[ii].weight.noalias() += d * in.transpose();
      grads.layers[ii].bias += d.rowwise().sum();
      Eigen::MatrixXf d_in = layers_[ii].weight.transpose() * d;
      if (ii > 0) d_in = d_in.cwiseProduct((in.array() > 0.0f).cast<float>().matrix());
      d = std::move(d_in);
    }
    return d;
  }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& l : layers_)
      g.layers.push_back({Eigen::MatrixXf::Zero(l.weight.rows(), l.weight.cols()),
                          Eigen::VectorXf::Zero(l.bias.size())});
    return g;
  }

 private:
  std::vector<Layer> layers_;
};

}  // namespace gonerf
