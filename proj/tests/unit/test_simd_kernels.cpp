#include <cmath>
#include <random>
#include <vector>

#include "cropsim/simd/kernels.hpp"
#include "doctest.h"

using cropsim::simd::Isa;

namespace {

std::vector<Isa> available_simd() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::kAvx2, Isa::kAvx512})
    if (cropsim::simd::isa_supported(isa)) out.push_back(isa);
  return out;
}

template <typename T>
std::vector<T> random_vec(size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <typename T>
void check_gemm_equivalence(double tol) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(1, 70);
  for (int trial = 0; trial < 60; ++trial) {
    const int64_t m = dim(rng), n = dim(rng) * (trial % 3 == 0 ? 5 : 1), k = dim(rng) * (trial % 4 == 0 ? 6 : 1);
    const bool ta = trial & 1, tb = (trial >> 1) & 1;
    const T alpha = static_cast<T>(trial % 5 == 0 ? 0.5 : 1.0);
    const T beta = static_cast<T>(trial % 7 == 0 ? 1.0 : (trial % 2 ? 0.25 : 0.0));
    const int64_t lda = ta ? m : k, ldb = tb ? k : n;
    auto a = random_vec<T>(static_cast<size_t>(m * k), rng);
    auto b = random_vec<T>(static_cast<size_t>(k * n), rng);
    auto c0 = random_vec<T>(static_cast<size_t>(m * n), rng);
    auto ref = c0;
    cropsim::simd::scalar::table<T>().gemm(ta, tb, m, n, k, alpha, a.data(), lda, b.data(), ldb, beta, ref.data(), n);
    for (Isa isa : available_simd()) {
      cropsim::simd::ScopedIsa pin(isa);
      auto got = c0;
      cropsim::simd::kernels<T>().gemm(ta, tb, m, n, k, alpha, a.data(), lda, b.data(), ldb, beta, got.data(), n);
      double worst = 0.0;
      for (size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(got[i]) - static_cast<double>(ref[i])));
      CHECK_MESSAGE(worst <= tol * static_cast<double>(k), "isa=", cropsim::simd::isa_name(isa), " m=", m, " n=", n,
                    " k=", k);
    }
  }
}

template <typename T>
void check_streaming_equivalence(double tol) {
  std::mt19937_64 rng(11);
  for (size_t n : {size_t{0}, size_t{1}, size_t{7}, size_t{16}, size_t{33}, size_t{1000}, size_t{4099}}) {
    auto a = random_vec<T>(n, rng);
    auto b = random_vec<T>(n, rng);
    const auto& ref = cropsim::simd::scalar::table<T>();
    std::vector<T> r_add(n), r_mul(n), r_aff(n), r_axpy = b;
    ref.add(static_cast<int64_t>(n), a.data(), b.data(), r_add.data());
    ref.mul(static_cast<int64_t>(n), a.data(), b.data(), r_mul.data());
    ref.affine(static_cast<int64_t>(n), T(0.3), a.data(), T(-2), r_aff.data());
    ref.axpy(static_cast<int64_t>(n), T(1.5), a.data(), r_axpy.data());
    const double r_sum = ref.sum(static_cast<int64_t>(n), a.data());
    const double r_dot = ref.dot(static_cast<int64_t>(n), a.data(), b.data());
    for (Isa isa : available_simd()) {
      cropsim::simd::ScopedIsa pin(isa);
      const auto& k = cropsim::simd::kernels<T>();
      std::vector<T> g_add(n), g_mul(n), g_aff(n), g_axpy = b;
      k.add(static_cast<int64_t>(n), a.data(), b.data(), g_add.data());
      k.mul(static_cast<int64_t>(n), a.data(), b.data(), g_mul.data());
      k.affine(static_cast<int64_t>(n), T(0.3), a.data(), T(-2), g_aff.data());
      k.axpy(static_cast<int64_t>(n), T(1.5), a.data(), g_axpy.data());
      CHECK(g_add == r_add);
      CHECK(g_mul == r_mul);
      for (size_t i = 0; i < n; ++i) {
        CHECK(std::abs(g_aff[i] - r_aff[i]) <= tol);
        CHECK(std::abs(g_axpy[i] - r_axpy[i]) <= tol);
      }
      CHECK(std::abs(static_cast<double>(k.sum(static_cast<int64_t>(n), a.data())) - r_sum) <= tol * (1.0 + n));
      CHECK(std::abs(static_cast<double>(k.dot(static_cast<int64_t>(n), a.data(), b.data())) - r_dot) <= tol * (1.0 + n));
    }
  }
}

}  // namespace

TEST_CASE("isa detection is consistent") {
  const Isa best = cropsim::simd::detect_isa();
  CHECK(cropsim::simd::isa_supported(best));
  CHECK(cropsim::simd::isa_supported(Isa::kScalar));
  {
    cropsim::simd::ScopedIsa pin(Isa::kScalar);
    CHECK(cropsim::simd::active_isa() == Isa::kScalar);
  }
}

TEST_CASE("simd gemm matches scalar reference (float)") { check_gemm_equivalence<float>(2e-6); }
TEST_CASE("simd gemm matches scalar reference (double)") { check_gemm_equivalence<double>(1e-14); }
TEST_CASE("simd streaming kernels match scalar reference (float)") { check_streaming_equivalence<float>(1e-5); }
TEST_CASE("simd streaming kernels match scalar reference (double)") { check_streaming_equivalence<double>(1e-12); }
