#pragma once

// Wasserstein critic D(x_cand, x_in, y_in, y_gen).
//
// The candidate and input images are stacked to 6 channels, reduced by
// stride-2 conv/instance-norm/LeakyReLU blocks to the fusion resolution
// (input / 16), joined with the 2k condition maps, reduced twice more and
// averaged to one unbounded score per sample. No batch statistics anywhere.

#include <random>
#include <span>
#include <vector>

#include "cropsim/model.hpp"

namespace cropsim {

inline constexpr double kLeakySlope = 0.2;

template <typename T>
class Critic {
 public:
  Critic() = default;
  Critic(const ModelConfig& cfg, std::mt19937_64& rng);

  /// Returns N scores.
  nn::Var<T> score(const nn::Var<T>& x_cand, const nn::Var<T>& x_in, std::span<const ConditionSet> y_in,
                   std::span<const ConditionSet> y_gen) const;
  /// Same, with precomputed condition maps (N x 2k x s x s).
  nn::Var<T> score_with_maps(const nn::Var<T>& x_cand, const nn::Var<T>& x_in, const nn::Var<T>& maps) const;
  nn::Var<T> condition_maps(std::span<const ConditionSet> y_in, std::span<const ConditionSet> y_gen) const;

  void collect(nn::ParamSet<T>& ps, const std::string& prefix = "critic");
  const ModelConfig& config() const { return cfg_; }

 private:
  nn::Var<T> block(const nn::Conv2d<T>& conv, const nn::Var<T>& x) const;

  ModelConfig cfg_;
  ConditionEmbedding<T> psi_;
  nn::Conv2d<T> head_;
  std::vector<nn::Conv2d<T>> down_;
  std::vector<nn::Conv2d<T>> post_;
  nn::Conv2d<T> out_;
};

}  // namespace cropsim
