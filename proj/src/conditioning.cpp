#include "cropsim/conditioning.hpp"

#include <cmath>

namespace cropsim {

ActiveConditions parse_active_conditions(const std::string& spec) {
  ActiveConditions a{false, false, false};
  size_t pos = 0;
  while (pos <= spec.size()) {
    size_t end = spec.find(',', pos);
    if (end == std::string::npos) end = spec.size();
    std::string tok = spec.substr(pos, end - pos);
    if (tok == "t") {
      a.time = true;
    } else if (tok == "c" || tok == "trt") {
      a.treatment = true;
    } else if (tok == "b" || tok == "bm") {
      a.biomass = true;
    } else if (!tok.empty()) {
      throw ConditionError("unknown condition type '" + tok + "' (expected t, c, b)");
    }
    pos = end + 1;
  }
  if (a.count() == 0) throw ConditionError("at least one condition type must be active");
  return a;
}

void validate_conditions(const ConditionSet& y, const ActiveConditions& active, int n_treatments) {
  if (active.treatment) {
    if (!y.c) throw ConditionError("treatment condition required but missing");
    if (*y.c < 0 || *y.c >= n_treatments)
      throw ConditionError("treatment " + std::to_string(*y.c) + " outside vocabulary of " +
                           std::to_string(n_treatments));
  }
  if (active.biomass) {
    if (!y.b) throw ConditionError("biomass condition required but missing");
    if ((*y.b)[0] < 0 || (*y.b)[1] < 0) throw ConditionError("biomass components must be non-negative");
  }
}

std::vector<double> positional_encoding(int t, int dim, double max_period) {
  std::vector<double> pe(static_cast<size_t>(dim));
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(max_period, -2.0 * i / dim);
    pe[static_cast<size_t>(2 * i)] = std::sin(t * freq);
    pe[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
  }
  return pe;
}

template <typename T>
ConditionEmbedding<T>::ConditionEmbedding(const ConditioningConfig& cfg, int dim, std::mt19937_64& rng)
    : cfg_(cfg), dim_(dim) {
  if (cfg.active.time) {
    time_fc1_ = nn::Linear<T>(dim, dim, rng);
    time_fc2_ = nn::Linear<T>(dim, dim, rng);
  }
  if (cfg.active.treatment) {
    if (cfg.n_treatments < 1) throw ConditionError("treatment conditioning needs n_treatments >= 1");
    Tensor<T> table(Shape{cfg.n_treatments, dim});
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int64_t i = 0; i < table.numel(); ++i) table[i] = static_cast<T>(nd(rng));
    treatment_table_ = nn::Var<T>(std::move(table), true);
  }
  if (cfg.active.biomass) {
    biomass_fc1_ = nn::Linear<T>(2, dim, rng);
    biomass_fc2_ = nn::Linear<T>(dim, dim, rng);
  }
}

template <typename T>
nn::Var<T> ConditionEmbedding<T>::operator()(std::span<const ConditionSet> ys) const {
  const int64_t n = static_cast<int64_t>(ys.size());
  for (const auto& y : ys) validate_conditions(y, cfg_.active, cfg_.n_treatments);
  std::vector<nn::Var<T>> parts;
  if (cfg_.active.time) {
    Tensor<T> pe(Shape{n, dim_});
    for (int64_t i = 0; i < n; ++i) {
      auto row = positional_encoding(ys[static_cast<size_t>(i)].t, dim_, cfg_.max_period);
      for (int j = 0; j < dim_; ++j) pe[i * dim_ + j] = static_cast<T>(row[static_cast<size_t>(j)]);
    }
    parts.push_back(time_fc2_(ag::silu(time_fc1_(nn::Var<T>(std::move(pe))))));
  }
  if (cfg_.active.treatment) {
    std::vector<int64_t> ids;
    for (const auto& y : ys) ids.push_back(*y.c);
    parts.push_back(ag::embedding_lookup(treatment_table_, ids));
  }
  if (cfg_.active.biomass) {
    Tensor<T> b(Shape{n, 2});
    for (int64_t i = 0; i < n; ++i) {
      auto z = cfg_.biomass_norm.apply(*ys[static_cast<size_t>(i)].b);
      b[2 * i] = static_cast<T>(z[0]);
      b[2 * i + 1] = static_cast<T>(z[1]);
    }
    parts.push_back(biomass_fc2_(ag::silu(biomass_fc1_(nn::Var<T>(std::move(b))))));
  }
  return ag::concat(parts, 1);
}

template <typename T>
void ConditionEmbedding<T>::collect(nn::ParamSet<T>& ps, const std::string& prefix) {
  if (cfg_.active.time) {
    time_fc1_.collect(ps, prefix + ".time.fc1");
    time_fc2_.collect(ps, prefix + ".time.fc2");
  }
  if (cfg_.active.treatment) ps.add(prefix + ".treatment.table", treatment_table_);
  if (cfg_.active.biomass) {
    biomass_fc1_.collect(ps, prefix + ".biomass.fc1");
    biomass_fc2_.collect(ps, prefix + ".biomass.fc2");
  }
}

template <typename T>
ConditionalBatchNorm<T>::ConditionalBatchNorm(int64_t c, int64_t aux_dim, std::mt19937_64& rng)
    : stats(c), gamma_map(aux_dim, c, rng), beta_map(aux_dim, c, rng), channels(c) {
  gamma_map.weight.mutable_value().fill(T(0));
  gamma_map.bias.mutable_value().fill(T(1));
  beta_map.weight.mutable_value().fill(T(0));
  beta_map.bias.mutable_value().fill(T(0));
}

template <typename T>
nn::Var<T> ConditionalBatchNorm<T>::operator()(const nn::Var<T>& x, const nn::Var<T>& aux, bool training) {
  if (x.shape().rank() != 4 || x.dim(1) != channels)
    throw ShapeError("CBN expects " + std::to_string(channels) + " channels, got " + x.shape().str());
  if (aux.dim(0) != x.dim(0)) throw ShapeError("CBN auxiliary batch size mismatch");
  const Shape affine_shape{x.dim(0), channels, 1, 1};
  nn::Var<T> gamma = ag::reshape(gamma_map(aux), affine_shape);
  nn::Var<T> beta = ag::reshape(beta_map(aux), affine_shape);
  return ag::add(ag::mul(stats(x, training), gamma), beta);
}

template <typename T>
void ConditionalBatchNorm<T>::collect(nn::ParamSet<T>& ps, const std::string& prefix) {
  stats.collect(ps, prefix + ".bn");
  gamma_map.collect(ps, prefix + ".gamma");
  beta_map.collect(ps, prefix + ".beta");
}

template <typename T>
nn::Var<T> embed_critic(const ConditionEmbedding<T>& psi, std::span<const ConditionSet> y_in,
                        std::span<const ConditionSet> y_gen) {
  int64_t side = 1;
  while (side * side < psi.dim()) ++side;
  if (side * side != psi.dim()) throw ShapeError("critic embedding width must be a square");
  if (y_in.size() != y_gen.size()) throw ShapeError("y_in / y_gen batch size mismatch");
  const int64_t n = static_cast<int64_t>(y_in.size());
  const int64_t k = psi.config().active.count();
  nn::Var<T> a_in = ag::reshape(psi(y_in), Shape{n, k, side, side});
  nn::Var<T> a_gen = ag::reshape(psi(y_gen), Shape{n, k, side, side});
  return ag::concat(std::vector<nn::Var<T>>{a_in, a_gen}, 1);
}

template class ConditionEmbedding<float>;
template class ConditionEmbedding<double>;
template class ConditionalBatchNorm<float>;
template class ConditionalBatchNorm<double>;
template nn::Var<float> embed_critic<float>(const ConditionEmbedding<float>&, std::span<const ConditionSet>,
                                            std::span<const ConditionSet>);
template nn::Var<double> embed_critic<double>(const ConditionEmbedding<double>&, std::span<const ConditionSet>,
                                              std::span<const ConditionSet>);

}  // namespace cropsim
