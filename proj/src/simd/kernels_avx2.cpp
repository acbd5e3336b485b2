// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached when CPUID
// reports both features.

#include <immintrin.h>

#include <cstdlib>

#include "cropsim/simd/kernels.hpp"

namespace cropsim::simd::avx2 {
namespace {

struct VecF {
  using T = float;
  using Reg = __m256;
  static constexpr int W = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg set1(T v) { return _mm256_set1_ps(v); }
  static Reg loadu(const T* p) { return _mm256_loadu_ps(p); }
  static void storeu(T* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_ps(a, b); }
  static double hsum(Reg v) {
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, v);
    double s = 0.0;
    for (float x : lanes) s += static_cast<double>(x);
    return s;
  }
};

struct VecD {
  using T = double;
  using Reg = __m256d;
  static constexpr int W = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg set1(T v) { return _mm256_set1_pd(v); }
  static Reg loadu(const T* p) { return _mm256_loadu_pd(p); }
  static void storeu(T* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_pd(a, b); }
  static double hsum(Reg v) {
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, v);
    return lanes[0] + lanes[1] + lanes[2] + lanes[3];
  }
};

#include "simd_impl.inl"

constexpr KernelTable<float> kFloat{gemm<VecF, 6, 2>, add<VecF>, mul<VecF>, axpy<VecF>,
                                    affine<VecF>,     sum<VecF>, dot<VecF>};
constexpr KernelTable<double> kDouble{gemm<VecD, 6, 2>, add<VecD>, mul<VecD>, axpy<VecD>,
                                      affine<VecD>,     sum<VecD>, dot<VecD>};

}  // namespace

template <>
const KernelTable<float>& table<float>() {
  return kFloat;
}
template <>
const KernelTable<double>& table<double>() {
  return kDouble;
}

}  // namespace cropsim::simd::avx2
