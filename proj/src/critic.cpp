#include "cropsim/critic.hpp"

namespace cropsim {

template <typename T>
Critic<T>::Critic(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg.validate();
  psi_ = ConditionEmbedding<T>(cfg.cond, cfg.critic_embed_dim(), rng);
  const int64_t w = cfg.critic_width;
  head_ = nn::Conv2d<T>(6, w, 3, 1, 1, rng);
  const int64_t widths[5] = {w, 2 * w, 4 * w, 8 * w, 8 * w};
  for (int s = 0; s < 4; ++s) down_.emplace_back(widths[s], widths[s + 1], 3, 2, 1, rng);
  const int64_t fused = 8 * w + 2 * cfg.cond.active.count();
  post_.emplace_back(fused, 8 * w, 3, 2, 1, rng);
  post_.emplace_back(8 * w, 8 * w, 3, 2, 1, rng);
  out_ = nn::Conv2d<T>(8 * w, 1, 1, 1, 0, rng);
}

template <typename T>
nn::Var<T> Critic<T>::block(const nn::Conv2d<T>& conv, const nn::Var<T>& x) const {
  nn::Var<T> h = conv(x);
  // A 1x1 map has no spatial statistics to normalise.
  if (h.dim(2) * h.dim(3) > 1) h = nn::instance_norm(h);
  return ag::leaky_relu(h, static_cast<T>(kLeakySlope));
}

template <typename T>
nn::Var<T> Critic<T>::condition_maps(std::span<const ConditionSet> y_in, std::span<const ConditionSet> y_gen) const {
  return embed_critic(psi_, y_in, y_gen);
}

template <typename T>
nn::Var<T> Critic<T>::score_with_maps(const nn::Var<T>& x_cand, const nn::Var<T>& x_in, const nn::Var<T>& maps) const {
  if (x_cand.shape() != x_in.shape())
    throw ShapeError("candidate " + x_cand.shape().str() + " and input " + x_in.shape().str() + " differ");
  if (x_cand.shape().rank() != 4 || x_cand.dim(1) != 3) throw ShapeError("critic expects N x 3 x H x W images");
  nn::Var<T> h = ag::leaky_relu(head_(ag::concat(std::vector<nn::Var<T>>{x_cand, x_in}, 1)),
                                static_cast<T>(kLeakySlope));
  for (const auto& c : down_) h = block(c, h);
  if (maps.dim(0) != h.dim(0) || maps.dim(2) != h.dim(2) || maps.dim(3) != h.dim(3))
    throw ShapeError("condition maps " + maps.shape().str() + " do not fit features " + h.shape().str());
  h = ag::concat(std::vector<nn::Var<T>>{h, maps}, 1);
  for (const auto& c : post_) h = block(c, h);
  nn::Var<T> s = ag::spatial_mean(out_(h));
  return ag::reshape(s, Shape{x_cand.dim(0)});
}

template <typename T>
nn::Var<T> Critic<T>::score(const nn::Var<T>& x_cand, const nn::Var<T>& x_in, std::span<const ConditionSet> y_in,
                            std::span<const ConditionSet> y_gen) const {
  return score_with_maps(x_cand, x_in, condition_maps(y_in, y_gen));
}

template <typename T>
void Critic<T>::collect(nn::ParamSet<T>& ps, const std::string& prefix) {
  psi_.collect(ps, prefix + ".psi");
  head_.collect(ps, prefix + ".head");
  for (size_t i = 0; i < down_.size(); ++i) down_[i].collect(ps, prefix + ".down" + std::to_string(i));
  for (size_t i = 0; i < post_.size(); ++i) post_[i].collect(ps, prefix + ".post" + std::to_string(i));
  out_.collect(ps, prefix + ".out");
}

template class Critic<float>;
template class Critic<double>;

}  // namespace cropsim
