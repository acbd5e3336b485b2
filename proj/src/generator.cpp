#include "cropsim/generator.hpp"

namespace cropsim {

void ModelConfig::validate() const {
  if (image_size <= 0 || image_size % 32 != 0)
    throw ShapeError("image size must be a positive multiple of 32, got " + std::to_string(image_size));
  if (gen_width < 2 || critic_width < 1) throw ShapeError("model widths must be positive");
}

template <typename T>
ResidualBlock<T>::ResidualBlock(int64_t cin, int64_t cout, int stride, int64_t aux_dim, std::mt19937_64& rng)
    : conv1(cin, cout, 3, stride, 1, rng, false),
      conv2(cout, cout, 3, 1, 1, rng, false),
      norm1(cout, aux_dim, rng),
      norm2(cout, aux_dim, rng),
      has_proj(stride != 1 || cin != cout) {
  if (has_proj) {
    proj = nn::Conv2d<T>(cin, cout, 1, stride, 0, rng, false);
    proj_norm = ConditionalBatchNorm<T>(cout, aux_dim, rng);
  }
}

template <typename T>
nn::Var<T> ResidualBlock<T>::operator()(const nn::Var<T>& x, const nn::Var<T>& a, bool training) {
  nn::Var<T> h = ag::relu(norm1(conv1(x), a, training));
  h = norm2(conv2(h), a, training);
  nn::Var<T> skip = has_proj ? proj_norm(proj(x), a, training) : x;
  return ag::relu(ag::add(h, skip));
}

template <typename T>
void ResidualBlock<T>::collect(nn::ParamSet<T>& ps, const std::string& prefix) {
  conv1.collect(ps, prefix + ".conv1");
  norm1.collect(ps, prefix + ".norm1");
  conv2.collect(ps, prefix + ".conv2");
  norm2.collect(ps, prefix + ".norm2");
  if (has_proj) {
    proj.collect(ps, prefix + ".proj");
    proj_norm.collect(ps, prefix + ".proj_norm");
  }
}

template <typename T>
UpStage<T>::UpStage(int64_t cin, int64_t cout, int64_t aux_dim, std::mt19937_64& rng)
    : conv1(cin, cout, 3, 1, 1, rng, false),
      conv2(cout, cout, 3, 1, 1, rng, false),
      norm1(cout, aux_dim, rng),
      norm2(cout, aux_dim, rng) {}

template <typename T>
nn::Var<T> UpStage<T>::operator()(const nn::Var<T>& x, const nn::Var<T>& a, bool training) {
  nn::Var<T> h = ag::upsample_nearest2x(x);
  h = ag::relu(norm1(conv1(h), a, training));
  return ag::relu(norm2(conv2(h), a, training));
}

template <typename T>
void UpStage<T>::collect(nn::ParamSet<T>& ps, const std::string& prefix) {
  conv1.collect(ps, prefix + ".conv1");
  norm1.collect(ps, prefix + ".norm1");
  conv2.collect(ps, prefix + ".conv2");
  norm2.collect(ps, prefix + ".norm2");
}

template <typename T>
Generator<T>::Generator(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg.validate();
  phi_ = ConditionEmbedding<T>(cfg.cond, cfg.embed_dim, rng);
  const int64_t aux = phi_.output_dim();
  const int64_t w = cfg.gen_width;

  stem_ = nn::Conv2d<T>(3, w, 7, 2, 3, rng, false);
  stem_norm_ = ConditionalBatchNorm<T>(w, aux, rng);
  const int64_t widths[4] = {w, 2 * w, 4 * w, 8 * w};
  int64_t cin = w;
  for (int s = 0; s < 4; ++s) {
    blocks_.emplace_back(cin, widths[s], s == 0 ? 1 : 2, aux, rng);
    blocks_.emplace_back(widths[s], widths[s], 1, aux, rng);
    cin = widths[s];
  }

  const int64_t latent = cfg.latent_channels();
  map1_ = nn::Linear<T>(cfg.noise_dim, latent / 2, rng);
  map2_ = nn::Linear<T>(latent / 2, latent * 3 / 4, rng);
  map3_ = nn::Linear<T>(latent * 3 / 4, latent, rng);

  const int64_t dec[6] = {8 * w, 4 * w, 2 * w, w, w, w / 2};
  for (int s = 0; s < 5; ++s) stages_.emplace_back(dec[s], dec[s + 1], aux, rng);
  out_ = nn::Conv2d<T>(dec[5], 3, 3, 1, 1, rng, true);
}

template <typename T>
nn::Var<T> Generator<T>::encode(const nn::Var<T>& x_in, std::span<const ConditionSet> y_in, bool training) {
  if (x_in.shape().rank() != 4 || x_in.dim(1) != 3 || x_in.dim(2) % 32 != 0 || x_in.dim(3) % 32 != 0)
    throw ShapeError("generator input must be N x 3 x H x W with H, W divisible by 32, got " + x_in.shape().str());
  if (static_cast<int64_t>(y_in.size()) != x_in.dim(0)) throw ShapeError("condition count differs from batch size");
  nn::Var<T> a = phi_(y_in);
  nn::Var<T> h = ag::relu(stem_norm_(stem_(x_in), a, training));
  h = ag::max_pool2d(h, 3, 2, 1);
  for (auto& b : blocks_) h = b(h, a, training);
  return h;
}

template <typename T>
nn::Var<T> Generator<T>::map_noise(const nn::Var<T>& z) const {
  const T slope = static_cast<T>(0.2);
  nn::Var<T> h = ag::leaky_relu(map1_(z), slope);
  h = ag::leaky_relu(map2_(h), slope);
  return map3_(h);
}

template <typename T>
nn::Var<T> Generator<T>::decode(const nn::Var<T>& xi, std::span<const ConditionSet> y_gen, const nn::Var<T>& w,
                                bool training) {
  if (static_cast<int64_t>(y_gen.size()) != xi.dim(0)) throw ShapeError("condition count differs from batch size");
  nn::Var<T> a = phi_(y_gen);
  nn::Var<T> h = xi;
  if (w.defined()) h = ag::add(h, ag::reshape(w, Shape{xi.dim(0), xi.dim(1), 1, 1}));
  for (auto& s : stages_) h = s(h, a, training);
  return ag::tanh(out_(h));
}

template <typename T>
nn::Var<T> Generator<T>::generate(const nn::Var<T>& x_in, std::span<const ConditionSet> y_in,
                                  std::span<const ConditionSet> y_gen, const nn::Var<T>& z, bool training) {
  nn::Var<T> xi = encode(x_in, y_in, training);
  return decode(xi, y_gen, map_noise(z), training);
}

template <typename T>
Tensor<T> Generator<T>::sample_noise(int64_t n, std::mt19937_64& rng) const {
  Tensor<T> z(Shape{n, cfg_.noise_dim});
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = static_cast<T>(nd(rng));
  return z;
}

template <typename T>
void Generator<T>::collect(nn::ParamSet<T>& ps, const std::string& prefix) {
  phi_.collect(ps, prefix + ".phi");
  stem_.collect(ps, prefix + ".enc.stem");
  stem_norm_.collect(ps, prefix + ".enc.stem_norm");
  for (size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(ps, prefix + ".enc.block" + std::to_string(i));
  map1_.collect(ps, prefix + ".map.fc1");
  map2_.collect(ps, prefix + ".map.fc2");
  map3_.collect(ps, prefix + ".map.fc3");
  for (size_t i = 0; i < stages_.size(); ++i) stages_[i].collect(ps, prefix + ".dec.stage" + std::to_string(i));
  out_.collect(ps, prefix + ".dec.out");
}

template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template struct UpStage<float>;
template struct UpStage<double>;
template class Generator<float>;
template class Generator<double>;

}  // namespace cropsim
