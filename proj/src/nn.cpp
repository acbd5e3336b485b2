#include "cropsim/nn.hpp"

#include <cmath>

namespace cropsim::nn {

template <typename T>
Var<T> uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<T> t(shape);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return Var<T>(std::move(t), true);
}

template <typename T>
Linear<T>::Linear(int64_t in, int64_t out, std::mt19937_64& rng, bool bias) : in_features(in), out_features(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_param<T>(Shape{out, in}, bound, rng);
  if (bias) this->bias = uniform_param<T>(Shape{out}, bound, rng);
}

template <typename T>
Var<T> Linear<T>::operator()(const Var<T>& x) const {
  Var<T> y = ag::matmul(x, weight, false, true);
  if (bias.defined()) y = ag::add(y, ag::reshape(bias, Shape{1, out_features}));
  return y;
}

template <typename T>
void Linear<T>::collect(ParamSet<T>& ps, const std::string& prefix) {
  ps.add(prefix + ".weight", weight);
  if (bias.defined()) ps.add(prefix + ".bias", bias);
}

template <typename T>
Conv2d<T>::Conv2d(int64_t cin, int64_t cout, int kernel, int stride, int pad, std::mt19937_64& rng, bool bias)
    : geo{stride, pad}, in_channels(cin), out_channels(cout) {
  const double fan_in = static_cast<double>(cin * kernel * kernel);
  const double bound = 1.0 / std::sqrt(fan_in);
  weight = uniform_param<T>(Shape{cout, cin, kernel, kernel}, bound, rng);
  if (bias) this->bias = uniform_param<T>(Shape{cout}, bound, rng);
}

template <typename T>
Var<T> Conv2d<T>::operator()(const Var<T>& x) const {
  Var<T> y = ag::conv2d(x, weight, geo);
  if (bias.defined()) y = ag::add(y, ag::reshape(bias, Shape{1, out_channels, 1, 1}));
  return y;
}

template <typename T>
void Conv2d<T>::collect(ParamSet<T>& ps, const std::string& prefix) {
  ps.add(prefix + ".weight", weight);
  if (bias.defined()) ps.add(prefix + ".bias", bias);
}

template <typename T>
Var<T> normalize(const Var<T>& x, const Shape& stat_shape, T eps, Tensor<T>* mean_out, Tensor<T>* var_out) {
  Var<T> mu = ag::mean_to(x, stat_shape);
  Var<T> centered = ag::sub(x, mu);
  Var<T> var = ag::mean_to(ag::mul(centered, centered), stat_shape);
  if (mean_out) *mean_out = mu.value();
  if (var_out) *var_out = var.value();
  return ag::mul(centered, ag::pow_scalar(ag::add_scalar(var, eps), T(-0.5)));
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  if (x.shape().rank() != 4) throw ShapeError("instance_norm expects NCHW");
  return normalize(x, Shape{x.dim(0), x.dim(1), 1, 1}, eps);
}

template <typename T>
BatchNormStats<T>::BatchNormStats(int64_t c, T m, T e)
    : running_mean(Shape{c}, T(0)), running_var(Shape{c}, T(1)), momentum(m), eps(e), channels(c) {}

template <typename T>
Var<T> BatchNormStats<T>::operator()(const Var<T>& x, bool training) {
  if (x.shape().rank() != 4 || x.dim(1) != channels)
    throw ShapeError("batch norm expects N x " + std::to_string(channels) + " x H x W, got " + x.shape().str());
  const Shape stat{1, channels, 1, 1};
  if (training) {
    Tensor<T> mu, var;
    Var<T> y = normalize(x, stat, eps, &mu, &var);
    const double n = static_cast<double>(x.numel() / channels);
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    for (int64_t c = 0; c < channels; ++c) {
      running_mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * mu[c]);
      running_var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * var[c] * unbias);
    }
    return y;
  }
  Tensor<T> shift(stat), inv(stat);
  for (int64_t c = 0; c < channels; ++c) {
    shift[c] = running_mean[c];
    inv[c] = T(1) / std::sqrt(running_var[c] + eps);
  }
  return ag::mul(ag::sub(x, Var<T>(std::move(shift))), Var<T>(std::move(inv)));
}

template <typename T>
void BatchNormStats<T>::collect(ParamSet<T>& ps, const std::string& prefix) {
  ps.add_buffer(prefix + ".running_mean", running_mean);
  ps.add_buffer(prefix + ".running_var", running_var);
}

template <typename T>
Adam<T>::Adam(std::vector<Var<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step = static_cast<T>(cfg_.lr / (bc1 > 0 ? bc1 : 1.0));
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg_.eps);
  for (size_t i = 0; i < params_.size(); ++i) {
    Var<T>& p = *params_[i];
    const Tensor<T>& g = p.grad();
    if (g.empty()) continue;
    T* w = p.mutable_value().data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    const T* gd = g.data();
    const int64_t n = g.numel();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * gd[j];
      v[j] = b2 * v[j] + (T(1) - b2) * gd[j] * gd[j];
      w[j] -= step * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template Var<float> uniform_param<float>(Shape, double, std::mt19937_64&);
template Var<double> uniform_param<double>(Shape, double, std::mt19937_64&);
template class Linear<float>;
template class Linear<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template Var<float> normalize<float>(const Var<float>&, const Shape&, float, Tensor<float>*, Tensor<float>*);
template Var<double> normalize<double>(const Var<double>&, const Shape&, double, Tensor<double>*, Tensor<double>*);
template Var<float> instance_norm<float>(const Var<float>&, float);
template Var<double> instance_norm<double>(const Var<double>&, double);
template class BatchNormStats<float>;
template class BatchNormStats<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace cropsim::nn
