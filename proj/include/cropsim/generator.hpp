#pragma once

// Encoder-decoder generator G(x_in, y_in, y_gen, z).
//
// Encoder: residual-18 layout without pooling head, every norm a CBN on
// a_in = Phi(y_in). Noise: z -> w through three linear layers, broadcast and
// added to the latent. Decoder: five nearest-upsampling stages, every norm a
// CBN on a_gen = Phi(y_gen), 3-channel tanh output.

#include <random>
#include <span>
#include <vector>

#include "cropsim/model.hpp"

namespace cropsim {

template <typename T>
struct ResidualBlock {
  nn::Conv2d<T> conv1, conv2, proj;
  ConditionalBatchNorm<T> norm1, norm2, proj_norm;
  bool has_proj = false;

  ResidualBlock() = default;
  ResidualBlock(int64_t cin, int64_t cout, int stride, int64_t aux_dim, std::mt19937_64& rng);
  nn::Var<T> operator()(const nn::Var<T>& x, const nn::Var<T>& a, bool training);
  void collect(nn::ParamSet<T>& ps, const std::string& prefix);
};

template <typename T>
struct UpStage {
  nn::Conv2d<T> conv1, conv2;
  ConditionalBatchNorm<T> norm1, norm2;

  UpStage() = default;
  UpStage(int64_t cin, int64_t cout, int64_t aux_dim, std::mt19937_64& rng);
  nn::Var<T> operator()(const nn::Var<T>& x, const nn::Var<T>& a, bool training);
  void collect(nn::ParamSet<T>& ps, const std::string& prefix);
};

template <typename T>
class Generator {
 public:
  Generator() = default;
  Generator(const ModelConfig& cfg, std::mt19937_64& rng);

  /// x_in: N x 3 x H x W -> latent N x 8w x H/32 x W/32.
  nn::Var<T> encode(const nn::Var<T>& x_in, std::span<const ConditionSet> y_in, bool training);
  /// z: N x noise_dim -> w: N x 8w.
  nn::Var<T> map_noise(const nn::Var<T>& z) const;
  /// Pass an undefined w to disable the noise path.
  nn::Var<T> decode(const nn::Var<T>& xi, std::span<const ConditionSet> y_gen, const nn::Var<T>& w, bool training);
  nn::Var<T> generate(const nn::Var<T>& x_in, std::span<const ConditionSet> y_in, std::span<const ConditionSet> y_gen,
                      const nn::Var<T>& z, bool training);

  /// Standard-normal noise batch.
  Tensor<T> sample_noise(int64_t n, std::mt19937_64& rng) const;

  void collect(nn::ParamSet<T>& ps, const std::string& prefix = "gen");
  const ModelConfig& config() const { return cfg_; }
  ConditionEmbedding<T>& embedding() { return phi_; }

 private:
  ModelConfig cfg_;
  ConditionEmbedding<T> phi_;
  nn::Conv2d<T> stem_;
  ConditionalBatchNorm<T> stem_norm_;
  std::vector<ResidualBlock<T>> blocks_;
  nn::Linear<T> map1_, map2_, map3_;
  std::vector<UpStage<T>> stages_;
  nn::Conv2d<T> out_;
};

}  // namespace cropsim
