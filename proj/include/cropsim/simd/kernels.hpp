#pragma once

// Dense arithmetic kernels behind the tensor ops. Each kernel has a scalar
// reference implementation and, on x86-64, AVX2/FMA and AVX-512 variants. The
// active variant is chosen once at startup from CPUID and can be overridden
// with the CROPSIM_ISA environment variable (scalar | avx2 | avx512) or
// set_isa() for equivalence testing.

#include <cstdint>
#include <string_view>

namespace cropsim::simd {

enum class Isa { kScalar = 0, kAvx2 = 1, kAvx512 = 2 };

std::string_view isa_name(Isa isa);

/// Best ISA supported by both the build and the running CPU.
Isa detect_isa();
bool isa_supported(Isa isa);

Isa active_isa();
/// Switch kernels; throws std::invalid_argument if the CPU lacks the ISA.
void set_isa(Isa isa);

/// RAII override used by tests to pin a kernel set for a scope.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : prev_(active_isa()) { set_isa(isa); }
  ~ScopedIsa() { set_isa(prev_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa prev_;
};

template <typename T>
struct KernelTable {
  // Row-major C[M,N] = alpha * op(A)[M,K] * op(B)[K,N] + beta * C.
  void (*gemm)(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a, int64_t lda,
               const T* b, int64_t ldb, T beta, T* c, int64_t ldc);
  void (*add)(int64_t n, const T* a, const T* b, T* out);
  void (*mul)(int64_t n, const T* a, const T* b, T* out);
  // y += alpha * x
  void (*axpy)(int64_t n, T alpha, const T* x, T* y);
  // out = alpha * x + beta
  void (*affine)(int64_t n, T alpha, const T* x, T beta, T* out);
  T (*sum)(int64_t n, const T* x);
  T (*dot)(int64_t n, const T* a, const T* b);
};

template <typename T>
const KernelTable<T>& kernels();

// Per-ISA tables; defined in the matching translation unit.
namespace scalar {
template <typename T>
const KernelTable<T>& table();
}
#if defined(__x86_64__)
namespace avx2 {
template <typename T>
const KernelTable<T>& table();
}
namespace avx512 {
template <typename T>
const KernelTable<T>& table();
}
#endif

}  // namespace cropsim::simd
