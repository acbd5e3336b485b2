#pragma once

// Architecture hyper-parameters shared by the generator and the critic.

#include <string>

#include "cropsim/conditioning.hpp"

namespace cropsim {

struct ModelConfig {
  int image_size = 256;
  // Base channel count; the residual-18 layout uses width x {1, 1, 2, 4, 8}.
  int gen_width = 64;
  int critic_width = 64;
  int noise_dim = 128;
  int embed_dim = kGeneratorEmbedDim;
  ConditioningConfig cond;

  int latent_channels() const { return gen_width * 8; }
  int latent_size() const { return image_size / 32; }
  int fusion_size() const { return critic_fusion_size(image_size); }
  int critic_embed_dim() const { return fusion_size() * fusion_size(); }

  /// Throws ShapeError unless the image size is a positive multiple of 32.
  void validate() const;
};

}  // namespace cropsim
