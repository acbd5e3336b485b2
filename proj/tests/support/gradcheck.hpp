#pragma once

// Central finite-difference oracle for autograd tests (float64).

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cropsim/ops.hpp"

namespace cropsim::testing {

using VarD = ag::Var<double>;

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  std::uniform_real_distribution<double> d(lo, hi);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
  return t;
}

inline Tensor<float> random_tensor_f(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return random_tensor(s, rng, lo, hi).cast<float>();
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

/// Compares autograd gradients of scalar f(inputs) against central differences.
/// Relative error per element is |a - n| / max(1, |a|, |n|) scaled by `floor`.
inline GradCheckResult grad_check(const std::function<VarD(const std::vector<VarD>&)>& f,
                                  std::vector<Tensor<double>> inputs, double h = 1e-6, double floor = 1e-2) {
  std::vector<VarD> vars;
  for (auto& t : inputs) vars.emplace_back(t, true);
  VarD out = f(vars);
  std::vector<VarD> grads = ag::grad<double>(std::vector<VarD>{out}, {}, vars, false);
  GradCheckResult r;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      auto eval = [&](double delta) {
        std::vector<VarD> probe;
        for (size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == k) t[i] += delta;
          probe.emplace_back(std::move(t), false);
        }
        ag::NoGradGuard ng;
        return f(probe).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double analytic = grads[k].value()[i];
      const double abs_err = std::abs(numeric - analytic);
      const double rel = abs_err / std::max({floor, std::abs(numeric), std::abs(analytic)});
      r.max_abs_err = std::max(r.max_abs_err, abs_err);
      r.max_rel_err = std::max(r.max_rel_err, rel);
    }
  }
  return r;
}

}  // namespace cropsim::testing
