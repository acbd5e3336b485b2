// Blocked GEMM driver and streaming kernels shared by the SIMD translation
// units. Included inside an anonymous namespace of each ISA-specific .cpp,
// which supplies vector wrapper types exposing:
//   using T; static constexpr int W;
//   V zero(); V set1(T); V loadu(const T*); void storeu(T*, V);
//   V fmadd(V a, V b, V c); V add(V, V); V mul(V, V); T hsum(V)
// Only intrinsics and C allocation are used here so that no inline library
// code gets instantiated with wider-ISA codegen.

constexpr int64_t kKc = 256;
constexpr int64_t kMc = 96;
constexpr int64_t kNc = 2048;

struct PackBuffers {
  void* a = nullptr;
  void* b = nullptr;
  PackBuffers() {
    a = std::aligned_alloc(64, static_cast<size_t>(kMc * kKc) * sizeof(double));
    b = std::aligned_alloc(64, static_cast<size_t>(kKc * (kNc + 64)) * sizeof(double));
  }
  ~PackBuffers() {
    std::free(a);
    std::free(b);
  }
  PackBuffers(const PackBuffers&) = delete;
  PackBuffers& operator=(const PackBuffers&) = delete;
};

inline PackBuffers& pack_buffers() {
  static thread_local PackBuffers buffers;
  return buffers;
}

template <typename V, int MR>
void pack_a(bool trans, const typename V::T* a, int64_t lda, int64_t i0, int64_t mc, int64_t p0, int64_t kc,
            typename V::T* out) {
  using T = typename V::T;
  for (int64_t ip = 0; ip < mc; ip += MR) {
    const int64_t rows = (mc - ip) < MR ? (mc - ip) : MR;
    for (int64_t p = 0; p < kc; ++p) {
      T* dst = out + p * MR;
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t i = i0 + ip + r;
        dst[r] = trans ? a[(p0 + p) * lda + i] : a[i * lda + p0 + p];
      }
      for (int64_t r = rows; r < MR; ++r) dst[r] = T(0);
    }
    out += kc * MR;
  }
}

template <typename V, int NR>
void pack_b(bool trans, const typename V::T* b, int64_t ldb, int64_t p0, int64_t kc, int64_t j0, int64_t nc,
            typename V::T* out) {
  using T = typename V::T;
  for (int64_t jp = 0; jp < nc; jp += NR) {
    const int64_t cols = (nc - jp) < NR ? (nc - jp) : NR;
    for (int64_t p = 0; p < kc; ++p) {
      T* dst = out + p * NR;
      if (!trans && cols == NR) {
        const T* src = b + (p0 + p) * ldb + j0 + jp;
        for (int64_t c = 0; c < NR; ++c) dst[c] = src[c];
      } else {
        for (int64_t c = 0; c < cols; ++c) {
          const int64_t j = j0 + jp + c;
          dst[c] = trans ? b[j * ldb + p0 + p] : b[(p0 + p) * ldb + j];
        }
        for (int64_t c = cols; c < NR; ++c) dst[c] = T(0);
      }
    }
    out += kc * NR;
  }
}

// acc[MR][NV] += Ap * Bp over kc, then C[rows, cols] += alpha * acc.
template <typename V, int MR, int NV>
void micro_kernel(int64_t kc, const typename V::T* ap, const typename V::T* bp, typename V::T alpha,
                  typename V::T* c, int64_t ldc, int64_t rows, int64_t cols) {
  using T = typename V::T;
  constexpr int NR = NV * V::W;
  typename V::Reg acc[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) acc[r][v] = V::zero();
  for (int64_t p = 0; p < kc; ++p) {
    typename V::Reg bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = V::loadu(bp + p * NR + v * V::W);
    for (int r = 0; r < MR; ++r) {
      const typename V::Reg av = V::set1(ap[p * MR + r]);
      for (int v = 0; v < NV; ++v) acc[r][v] = V::fmadd(av, bv[v], acc[r][v]);
    }
  }
  const typename V::Reg alpha_v = V::set1(alpha);
  if (rows == MR && cols == NR) {
    for (int r = 0; r < MR; ++r)
      for (int v = 0; v < NV; ++v) {
        T* dst = c + r * ldc + v * V::W;
        V::storeu(dst, V::fmadd(alpha_v, acc[r][v], V::loadu(dst)));
      }
    return;
  }
  alignas(64) T tile[MR * NR];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) V::storeu(tile + r * NR + v * V::W, acc[r][v]);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < cols; ++j) c[r * ldc + j] += alpha * tile[r * NR + j];
}

template <typename V, int MR, int NV>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, typename V::T alpha, const typename V::T* a,
          int64_t lda, const typename V::T* b, int64_t ldb, typename V::T beta, typename V::T* c, int64_t ldc) {
  using T = typename V::T;
  constexpr int NR = NV * V::W;
  for (int64_t i = 0; i < m; ++i) {
    T* row = c + i * ldc;
    if (beta == T(0)) {
      for (int64_t j = 0; j < n; ++j) row[j] = T(0);
    } else if (beta != T(1)) {
      for (int64_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (k == 0 || alpha == T(0)) return;
  PackBuffers& buf = pack_buffers();
  T* pa = static_cast<T*>(buf.a);
  T* pb = static_cast<T*>(buf.b);
  for (int64_t jc = 0; jc < n; jc += kNc) {
    const int64_t nc = (n - jc) < kNc ? (n - jc) : kNc;
    for (int64_t pc = 0; pc < k; pc += kKc) {
      const int64_t kc = (k - pc) < kKc ? (k - pc) : kKc;
      pack_b<V, NR>(trans_b, b, ldb, pc, kc, jc, nc, pb);
      for (int64_t ic = 0; ic < m; ic += kMc) {
        const int64_t mc = (m - ic) < kMc ? (m - ic) : kMc;
        pack_a<V, MR>(trans_a, a, lda, ic, mc, pc, kc, pa);
        for (int64_t jr = 0; jr < nc; jr += NR) {
          const int64_t cols = (nc - jr) < NR ? (nc - jr) : NR;
          const T* bpanel = pb + (jr / NR) * kc * NR;
          for (int64_t ir = 0; ir < mc; ir += MR) {
            const int64_t rows = (mc - ir) < MR ? (mc - ir) : MR;
            micro_kernel<V, MR, NV>(kc, pa + (ir / MR) * kc * MR, bpanel, alpha, c + (ic + ir) * ldc + jc + jr, ldc,
                                    rows, cols);
          }
        }
      }
    }
  }
}

template <typename V>
void add(int64_t n, const typename V::T* a, const typename V::T* b, typename V::T* out) {
  int64_t i = 0;
  for (; i + V::W <= n; i += V::W) V::storeu(out + i, V::add(V::loadu(a + i), V::loadu(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename V>
void mul(int64_t n, const typename V::T* a, const typename V::T* b, typename V::T* out) {
  int64_t i = 0;
  for (; i + V::W <= n; i += V::W) V::storeu(out + i, V::mul(V::loadu(a + i), V::loadu(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename V>
void axpy(int64_t n, typename V::T alpha, const typename V::T* x, typename V::T* y) {
  const typename V::Reg av = V::set1(alpha);
  int64_t i = 0;
  for (; i + V::W <= n; i += V::W) V::storeu(y + i, V::fmadd(av, V::loadu(x + i), V::loadu(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename V>
void affine(int64_t n, typename V::T alpha, const typename V::T* x, typename V::T beta, typename V::T* out) {
  const typename V::Reg av = V::set1(alpha);
  const typename V::Reg bv = V::set1(beta);
  int64_t i = 0;
  for (; i + V::W <= n; i += V::W) V::storeu(out + i, V::fmadd(av, V::loadu(x + i), bv));
  for (; i < n; ++i) out[i] = alpha * x[i] + beta;
}

// Reductions accumulate in the vector type and finish in double so that the
// result tracks the scalar reference closely.
template <typename V>
typename V::T sum(int64_t n, const typename V::T* x) {
  typename V::Reg acc0 = V::zero(), acc1 = V::zero();
  int64_t i = 0;
  for (; i + 2 * V::W <= n; i += 2 * V::W) {
    acc0 = V::add(acc0, V::loadu(x + i));
    acc1 = V::add(acc1, V::loadu(x + i + V::W));
  }
  for (; i + V::W <= n; i += V::W) acc0 = V::add(acc0, V::loadu(x + i));
  double total = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) total += static_cast<double>(x[i]);
  return static_cast<typename V::T>(total);
}

template <typename V>
typename V::T dot(int64_t n, const typename V::T* a, const typename V::T* b) {
  typename V::Reg acc0 = V::zero(), acc1 = V::zero();
  int64_t i = 0;
  for (; i + 2 * V::W <= n; i += 2 * V::W) {
    acc0 = V::fmadd(V::loadu(a + i), V::loadu(b + i), acc0);
    acc1 = V::fmadd(V::loadu(a + i + V::W), V::loadu(b + i + V::W), acc1);
  }
  for (; i + V::W <= n; i += V::W) acc0 = V::fmadd(V::loadu(a + i), V::loadu(b + i), acc0);
  double total = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return static_cast<typename V::T>(total);
}
