#pragma once

// Small neural-network layer library on top of the autograd ops.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cropsim/ops.hpp"

namespace cropsim::nn {

using ag::Var;

/// Named reference to a trainable parameter owned by a module.
template <typename T>
struct NamedParam {
  std::string name;
  Var<T>* var;
};

/// Named reference to a non-trainable state tensor (e.g. running statistics).
template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
struct ParamSet {
  std::vector<NamedParam<T>> params;
  std::vector<NamedBuffer<T>> buffers;

  void add(std::string name, Var<T>& v) { params.push_back({std::move(name), &v}); }
  void add_buffer(std::string name, Tensor<T>& t) { buffers.push_back({std::move(name), &t}); }
  void append(const ParamSet& other) {
    params.insert(params.end(), other.params.begin(), other.params.end());
    buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
  }
  int64_t count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.var->numel();
    return n;
  }
  void zero_grad() {
    for (auto& p : params) p.var->zero_grad();
  }
};

/// Uniform(-bound, bound) parameter tensor.
template <typename T>
Var<T> uniform_param(Shape shape, double bound, std::mt19937_64& rng);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int64_t in, int64_t out, std::mt19937_64& rng, bool bias = true);

  /// x: N x in -> N x out
  Var<T> operator()(const Var<T>& x) const;
  void collect(ParamSet<T>& ps, const std::string& prefix);

  Var<T> weight;  // out x in
  Var<T> bias;    // out
  int64_t in_features = 0;
  int64_t out_features = 0;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int64_t cin, int64_t cout, int kernel, int stride, int pad, std::mt19937_64& rng, bool bias = true);

  Var<T> operator()(const Var<T>& x) const;
  void collect(ParamSet<T>& ps, const std::string& prefix);

  Var<T> weight;  // cout x cin x k x k
  Var<T> bias;    // cout (optional)
  ag::Conv2dGeometry geo;
  int64_t in_channels = 0;
  int64_t out_channels = 0;
};

/// Normalises x over `stat_shape`-reduced axes: (x - mean) / sqrt(var + eps).
/// Returns the biased batch mean and variance through the out-params.
template <typename T>
Var<T> normalize(const Var<T>& x, const Shape& stat_shape, T eps, Tensor<T>* mean_out = nullptr,
                 Tensor<T>* var_out = nullptr);

/// Per-sample, per-channel normalisation (no affine); never couples batch elements.
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));

/// Batch normalisation statistics holder with running averages.
template <typename T>
class BatchNormStats {
 public:
  BatchNormStats() = default;
  explicit BatchNormStats(int64_t channels, T momentum = T(0.1), T eps = T(1e-5));

  /// Normalises with batch statistics when training (updating running
  /// averages), running statistics otherwise.
  Var<T> operator()(const Var<T>& x, bool training);
  void collect(ParamSet<T>& ps, const std::string& prefix);

  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  int64_t channels = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adam over a fixed parameter list; reads gradients from leaf .grad().
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var<T>*> params, AdamConfig cfg);

  void step();
  void zero_grad();
  int64_t steps() const { return t_; }

  // Optimizer moments, exposed for checkpointing.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_steps(int64_t t) { t_ = t; }

 private:
  std::vector<Var<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

template <typename T>
std::vector<Var<T>*> param_pointers(const ParamSet<T>& ps) {
  std::vector<Var<T>*> out;
  for (const auto& p : ps.params) out.push_back(p.var);
  return out;
}

}  // namespace cropsim::nn
