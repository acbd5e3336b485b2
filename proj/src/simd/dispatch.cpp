#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "cropsim/simd/kernels.hpp"

namespace cropsim::simd {
namespace {

Isa initial_isa() {
  Isa best = detect_isa();
  if (const char* env = std::getenv("CROPSIM_ISA")) {
    std::string v(env);
    Isa want = v == "scalar" ? Isa::kScalar : v == "avx2" ? Isa::kAvx2 : v == "avx512" ? Isa::kAvx512 : best;
    if (isa_supported(want)) return want;
  }
  return best;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kAvx512:
      return "avx512";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
#if defined(__x86_64__) && defined(CROPSIM_HAVE_X86_SIMD)
    case Isa::kAvx2:
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    case Isa::kAvx512:
      return __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("fma");
#endif
    default:
      return false;
  }
}

Isa detect_isa() {
  if (isa_supported(Isa::kAvx512)) return Isa::kAvx512;
  if (isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  return Isa::kScalar;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::invalid_argument("ISA not supported on this CPU: " + std::string(isa_name(isa)));
  current().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& kernels() {
  switch (active_isa()) {
#if defined(__x86_64__) && defined(CROPSIM_HAVE_X86_SIMD)
    case Isa::kAvx512:
      return avx512::table<T>();
    case Isa::kAvx2:
      return avx2::table<T>();
#endif
    default:
      return scalar::table<T>();
  }
}

template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

}  // namespace cropsim::simd
