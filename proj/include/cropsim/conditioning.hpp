#pragma once

// Condition embeddings and conditional batch normalisation.
//
// A ConditionEmbedding maps each active condition type to a vector of the
// same width and concatenates them in the fixed order [time, treatment,
// biomass]. The generator uses one at width 64 (its CBN auxiliary vector);
// the critic uses an independent one whose width is the square of its fusion
// resolution (256 = 16x16 at 256 px inputs, 16 = 4x4 at 64 px).

#include <random>
#include <span>
#include <vector>

#include "cropsim/conditions.hpp"
#include "cropsim/nn.hpp"

namespace cropsim {

inline constexpr int kGeneratorEmbedDim = 64;
inline constexpr int kCriticEmbedDim = 256;
inline constexpr int kCriticFusionSize = 16;

/// Critic fusion resolution for a given input side (input / 16).
inline int critic_fusion_size(int image_size) { return image_size / 16; }

struct ConditioningConfig {
  ActiveConditions active;
  int n_treatments = 1;
  BiomassNormalizer biomass_norm;
  double max_period = 10000.0;
};

/// Sinusoidal encoding of an integer day: [sin(t w_0), cos(t w_0), sin(t w_1), ...]
/// with w_i = max_period^(-2i/dim). Defined for any integer t.
std::vector<double> positional_encoding(int t, int dim, double max_period = 10000.0);

template <typename T>
class ConditionEmbedding {
 public:
  ConditionEmbedding() = default;
  ConditionEmbedding(const ConditioningConfig& cfg, int dim, std::mt19937_64& rng);

  /// N condition sets -> N x (k * dim) with k active types.
  nn::Var<T> operator()(std::span<const ConditionSet> ys) const;
  int dim() const { return dim_; }
  int output_dim() const { return dim_ * cfg_.active.count(); }
  const ConditioningConfig& config() const { return cfg_; }
  void collect(nn::ParamSet<T>& ps, const std::string& prefix);

 private:
  ConditioningConfig cfg_;
  int dim_ = 0;
  nn::Linear<T> time_fc1_, time_fc2_;
  nn::Var<T> treatment_table_;
  nn::Linear<T> biomass_fc1_, biomass_fc2_;
};

/// Conditional batch normalisation: gamma(a) * BN(x) + beta(a), with gamma and
/// beta single linear maps from the auxiliary vector, initialised to 1 and 0.
template <typename T>
class ConditionalBatchNorm {
 public:
  ConditionalBatchNorm() = default;
  ConditionalBatchNorm(int64_t channels, int64_t aux_dim, std::mt19937_64& rng);

  nn::Var<T> operator()(const nn::Var<T>& x, const nn::Var<T>& aux, bool training);
  void collect(nn::ParamSet<T>& ps, const std::string& prefix);

  nn::BatchNormStats<T> stats;
  nn::Linear<T> gamma_map;
  nn::Linear<T> beta_map;
  int64_t channels = 0;
};

/// Generator-side auxiliary vector a = [Phi_t(t), Phi_c(c), Phi_b(b)].
template <typename T>
nn::Var<T> embed_generator(const ConditionEmbedding<T>& phi, std::span<const ConditionSet> ys) {
  return phi(ys);
}

/// Critic-side condition maps: for each active type, Psi(y_in) and Psi(y_gen)
/// reshaped row-major to s x s (s^2 = Psi width); returned as N x 2k x s x s
/// with the y_in maps first.
template <typename T>
nn::Var<T> embed_critic(const ConditionEmbedding<T>& psi, std::span<const ConditionSet> y_in,
                        std::span<const ConditionSet> y_gen);

}  // namespace cropsim
