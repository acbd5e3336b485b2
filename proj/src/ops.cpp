#include "cropsim/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cropsim/simd/kernels.hpp"

namespace cropsim::ag {
namespace {

// ---------------------------------------------------------------------------
// Broadcast iteration: walks the full (output) index space in contiguous inner
// runs, exposing per-operand offsets and inner strides (1 or 0 after merging).

struct BroadcastIter {
  int nd = 0;
  int64_t n[4]{1, 1, 1, 1};
  int64_t s0[4]{0, 0, 0, 0};
  int64_t s1[4]{0, 0, 0, 0};
  int64_t so[4]{0, 0, 0, 0};
};

void operand_strides(const Shape& full, const Shape& x, int64_t out[4]) {
  auto f = full.padded4();
  auto d = x.padded4();
  int64_t stride = 1;
  for (int i = 3; i >= 0; --i) {
    out[i] = (d[static_cast<size_t>(i)] == 1 && f[static_cast<size_t>(i)] != 1) ? 0 : stride;
    if (f[static_cast<size_t>(i)] == 1) out[i] = 0;
    stride *= d[static_cast<size_t>(i)];
  }
}

BroadcastIter make_iter(const Shape& full, const Shape& a, const Shape& b) {
  int64_t sa[4], sb[4], so[4];
  operand_strides(full, a, sa);
  operand_strides(full, b, sb);
  operand_strides(full, full, so);
  auto f = full.padded4();
  // Drop unit dims, then merge neighbours that stay linear for every operand.
  int64_t dims[4], xa[4], xb[4], xo[4];
  int k = 0;
  for (int i = 0; i < 4; ++i) {
    if (f[static_cast<size_t>(i)] == 1) continue;
    dims[k] = f[static_cast<size_t>(i)];
    xa[k] = sa[i];
    xb[k] = sb[i];
    xo[k] = so[i];
    ++k;
  }
  BroadcastIter it;
  if (k == 0) {
    it.nd = 1;
    it.n[0] = 1;
    it.s0[0] = it.s1[0] = it.so[0] = 1;
    return it;
  }
  int m = 0;
  it.n[0] = dims[0];
  it.s0[0] = xa[0];
  it.s1[0] = xb[0];
  it.so[0] = xo[0];
  for (int i = 1; i < k; ++i) {
    bool merge = it.s0[m] == xa[i] * dims[i] && it.s1[m] == xb[i] * dims[i] && it.so[m] == xo[i] * dims[i];
    if (merge) {
      it.n[m] *= dims[i];
      it.s0[m] = xa[i];
      it.s1[m] = xb[i];
      it.so[m] = xo[i];
    } else {
      ++m;
      it.n[m] = dims[i];
      it.s0[m] = xa[i];
      it.s1[m] = xb[i];
      it.so[m] = xo[i];
    }
  }
  it.nd = m + 1;
  return it;
}

// Calls inner(offset_a, offset_b, offset_out, run_length, inner_stride_a, inner_stride_b).
template <class F>
void for_each_run(const BroadcastIter& it, F&& inner) {
  // Left-pad to 4 dims so the loop nest is fixed.
  int64_t n[4]{1, 1, 1, 1}, s0[4]{0, 0, 0, 0}, s1[4]{0, 0, 0, 0}, so[4]{0, 0, 0, 0};
  const int off = 4 - it.nd;
  for (int i = 0; i < it.nd; ++i) {
    n[off + i] = it.n[i];
    s0[off + i] = it.s0[i];
    s1[off + i] = it.s1[i];
    so[off + i] = it.so[i];
  }
  for (int64_t i0 = 0; i0 < n[0]; ++i0)
    for (int64_t i1 = 0; i1 < n[1]; ++i1)
      for (int64_t i2 = 0; i2 < n[2]; ++i2) {
        const int64_t oa = i0 * s0[0] + i1 * s0[1] + i2 * s0[2];
        const int64_t ob = i0 * s1[0] + i1 * s1[1] + i2 * s1[2];
        const int64_t oo = i0 * so[0] + i1 * so[1] + i2 * so[2];
        inner(oa, ob, oo, n[3], s0[3], s1[3]);
      }
}

enum class BinOp { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary_forward(const Tensor<T>& a, const Tensor<T>& b, BinOp op) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const auto& k = simd::kernels<T>();
  auto it = make_iter(out_shape, a.shape(), b.shape());
  for_each_run(it, [&](int64_t oa, int64_t ob, int64_t oo, int64_t len, int64_t sa, int64_t sb) {
    const T* x = pa + oa;
    const T* y = pb + ob;
    T* z = po + oo;
    if (sa == 1 && sb == 1) {
      switch (op) {
        case BinOp::kAdd:
          k.add(len, x, y, z);
          return;
        case BinOp::kMul:
          k.mul(len, x, y, z);
          return;
        case BinOp::kSub:
          for (int64_t i = 0; i < len; ++i) z[i] = x[i] - y[i];
          return;
      }
    }
    if (sa == 1 && sb == 0) {
      const T yv = *y;
      switch (op) {
        case BinOp::kAdd:
          k.affine(len, T(1), x, yv, z);
          return;
        case BinOp::kSub:
          k.affine(len, T(1), x, -yv, z);
          return;
        case BinOp::kMul:
          k.affine(len, yv, x, T(0), z);
          return;
      }
    }
    if (sa == 0 && sb == 1) {
      const T xv = *x;
      switch (op) {
        case BinOp::kAdd:
          k.affine(len, T(1), y, xv, z);
          return;
        case BinOp::kSub:
          k.affine(len, T(-1), y, xv, z);
          return;
        case BinOp::kMul:
          k.affine(len, xv, y, T(0), z);
          return;
      }
    }
    for (int64_t i = 0; i < len; ++i) {
      const T xv = x[i * sa];
      const T yv = y[i * sb];
      z[i] = op == BinOp::kAdd ? xv + yv : op == BinOp::kSub ? xv - yv : xv * yv;
    }
  });
  return out;
}

bool broadcastable_to(const Shape& from, const Shape& to) {
  if (from.rank() > to.rank()) {
    // Extra leading dims must be 1.
    for (int i = 0; i < from.rank() - to.rank(); ++i)
      if (from[i] != 1) return false;
  }
  auto f = from.padded4();
  auto t = to.padded4();
  for (size_t i = 0; i < 4; ++i)
    if (f[i] != t[i] && f[i] != 1) return false;
  return true;
}

template <typename T>
Tensor<T> sum_to_forward(const Tensor<T>& x, const Shape& target) {
  if (!broadcastable_to(target, x.shape()))
    throw ShapeError("sum_to: " + target.str() + " is not broadcastable to " + x.shape().str());
  Tensor<T> out(target);
  if (target.numel() == x.numel()) {
    std::copy(x.data(), x.data() + x.numel(), out.data());
    return out;
  }
  const T* px = x.data();
  T* po = out.data();
  const auto& k = simd::kernels<T>();
  auto it = make_iter(x.shape(), x.shape(), target);
  for_each_run(it, [&](int64_t ox, int64_t ot, int64_t, int64_t len, int64_t, int64_t st) {
    if (st == 0) {
      po[ot] += k.sum(len, px + ox);
    } else {
      k.axpy(len, T(1), px + ox, po + ot);
    }
  });
  return out;
}

template <typename T>
Tensor<T> broadcast_forward(const Tensor<T>& x, const Shape& target) {
  if (!broadcastable_to(x.shape(), target))
    throw ShapeError("broadcast_to: " + x.shape().str() + " -> " + target.str());
  Tensor<T> out(target);
  const T* px = x.data();
  T* po = out.data();
  auto it = make_iter(target, x.shape(), target);
  for_each_run(it, [&](int64_t ox, int64_t, int64_t oo, int64_t len, int64_t sx, int64_t) {
    if (sx == 1) {
      std::copy(px + ox, px + ox + len, po + oo);
    } else {
      std::fill(po + oo, po + oo + len, px[ox]);
    }
  });
  return out;
}

template <typename T>
Tensor<T> map_unary(const Tensor<T>& x, auto f) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
  return out;
}

// Block decomposition around an axis: [outer, axis, inner].
struct AxisSplit {
  int64_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  if (axis < 0 || axis >= s.rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + s.str());
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.axis = s[axis];
  for (int i = axis + 1; i < s.rank(); ++i) r.inner *= s[i];
  return r;
}

// ---------------------------------------------------------------------------
// Convolution helpers (NCHW, batched im2col + GEMM).

struct ConvDims {
  int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
  int64_t k() const { return cin * kh * kw; }
  int64_t hw_out() const { return ho * wo; }
};

ConvDims conv_dims(const Shape& x, const Shape& w, Conv2dGeometry geo) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d expects 4-D input and weight");
  if (x[1] != w[1])
    throw ShapeError("conv2d channel mismatch: input " + x.str() + " weight " + w.str());
  if (geo.stride < 1 || geo.pad < 0) throw ShapeError("conv2d: invalid stride/pad");
  ConvDims d{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0, geo.stride, geo.pad};
  d.ho = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
  d.wo = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
  if (d.ho <= 0 || d.wo <= 0) throw ShapeError("conv2d: kernel larger than padded input " + x.str());
  return d;
}

// Limit on im2col buffer elements; batches are processed in chunks below it.
constexpr int64_t kColBudget = int64_t{1} << 24;

int64_t chunk_size(const ConvDims& d) {
  const int64_t per_sample = d.k() * d.hw_out();
  int64_t c = per_sample > 0 ? kColBudget / per_sample : d.n;
  if (c < 1) c = 1;
  if (c > d.n) c = d.n;
  return c;
}

// col[(ci*kh+ki)*kw+kj][s*HoWo + oh*Wo + ow] for samples [n0, n0+nb).
template <typename T>
void im2col(const T* x, const ConvDims& d, int64_t n0, int64_t nb, T* col) {
  const int64_t cols = nb * d.hw_out();
  for (int64_t ci = 0; ci < d.cin; ++ci)
    for (int64_t ki = 0; ki < d.kh; ++ki)
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        T* row = col + ((ci * d.kh + ki) * d.kw + kj) * cols;
        for (int64_t s = 0; s < nb; ++s) {
          const T* plane = x + ((n0 + s) * d.cin + ci) * d.h * d.w;
          T* dst = row + s * d.hw_out();
          for (int64_t oh = 0; oh < d.ho; ++oh) {
            const int64_t ih = oh * d.stride - d.pad + ki;
            T* drow = dst + oh * d.wo;
            if (ih < 0 || ih >= d.h) {
              std::fill(drow, drow + d.wo, T(0));
              continue;
            }
            const T* srow = plane + ih * d.w;
            if (d.stride == 1) {
              for (int64_t ow = 0; ow < d.wo; ++ow) {
                const int64_t iw = ow - d.pad + kj;
                drow[ow] = (iw >= 0 && iw < d.w) ? srow[iw] : T(0);
              }
            } else {
              for (int64_t ow = 0; ow < d.wo; ++ow) {
                const int64_t iw = ow * d.stride - d.pad + kj;
                drow[ow] = (iw >= 0 && iw < d.w) ? srow[iw] : T(0);
              }
            }
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvDims& d, int64_t n0, int64_t nb, T* x) {
  const int64_t cols = nb * d.hw_out();
  for (int64_t ci = 0; ci < d.cin; ++ci)
    for (int64_t ki = 0; ki < d.kh; ++ki)
      for (int64_t kj = 0; kj < d.kw; ++kj) {
        const T* row = col + ((ci * d.kh + ki) * d.kw + kj) * cols;
        for (int64_t s = 0; s < nb; ++s) {
          T* plane = x + ((n0 + s) * d.cin + ci) * d.h * d.w;
          const T* src = row + s * d.hw_out();
          for (int64_t oh = 0; oh < d.ho; ++oh) {
            const int64_t ih = oh * d.stride - d.pad + ki;
            if (ih < 0 || ih >= d.h) continue;
            T* drow = plane + ih * d.w;
            const T* srow = src + oh * d.wo;
            for (int64_t ow = 0; ow < d.wo; ++ow) {
              const int64_t iw = ow * d.stride - d.pad + kj;
              if (iw >= 0 && iw < d.w) drow[iw] += srow[ow];
            }
          }
        }
      }
}

// NCHW chunk -> [C][nb*HW] and back.
template <typename T>
void nchw_to_cm(const T* x, int64_t c, int64_t hw, int64_t n0, int64_t nb, T* out) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t s = 0; s < nb; ++s) {
      const T* src = x + ((n0 + s) * c + ch) * hw;
      std::copy(src, src + hw, out + ch * nb * hw + s * hw);
    }
}

template <typename T>
void cm_to_nchw(const T* m, int64_t c, int64_t hw, int64_t n0, int64_t nb, T* x) {
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t s = 0; s < nb; ++s) {
      const T* src = m + ch * nb * hw + s * hw;
      std::copy(src, src + hw, x + ((n0 + s) * c + ch) * hw);
    }
}

bool is_pointwise(const ConvDims& d) { return d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0; }

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvDims& d) {
  Tensor<T> out(Shape{d.n, d.cout, d.ho, d.wo});
  const auto& k = simd::kernels<T>();
  const int64_t chunk = chunk_size(d);
  AlignedVector<T> col, res;
  for (int64_t n0 = 0; n0 < d.n; n0 += chunk) {
    const int64_t nb = std::min(chunk, d.n - n0);
    const int64_t cols = nb * d.hw_out();
    col.resize(static_cast<size_t>(d.k() * cols));
    res.resize(static_cast<size_t>(d.cout * cols));
    if (is_pointwise(d)) {
      nchw_to_cm(x.data(), d.cin, d.hw_out(), n0, nb, col.data());
    } else {
      im2col(x.data(), d, n0, nb, col.data());
    }
    k.gemm(false, false, d.cout, cols, d.k(), T(1), w.data(), d.k(), col.data(), cols, T(0), res.data(), cols);
    cm_to_nchw(res.data(), d.cout, d.hw_out(), n0, nb, out.data());
  }
  return out;
}

template <typename T>
Tensor<T> conv_input_grad_forward(const Tensor<T>& g, const Tensor<T>& w, const ConvDims& d) {
  Tensor<T> dx(Shape{d.n, d.cin, d.h, d.w});
  const auto& k = simd::kernels<T>();
  const int64_t chunk = chunk_size(d);
  AlignedVector<T> gm, col;
  for (int64_t n0 = 0; n0 < d.n; n0 += chunk) {
    const int64_t nb = std::min(chunk, d.n - n0);
    const int64_t cols = nb * d.hw_out();
    gm.resize(static_cast<size_t>(d.cout * cols));
    col.resize(static_cast<size_t>(d.k() * cols));
    nchw_to_cm(g.data(), d.cout, d.hw_out(), n0, nb, gm.data());
    k.gemm(true, false, d.k(), cols, d.cout, T(1), w.data(), d.k(), gm.data(), cols, T(0), col.data(), cols);
    if (is_pointwise(d)) {
      cm_to_nchw(col.data(), d.cin, d.hw_out(), n0, nb, dx.data());
    } else {
      col2im(col.data(), d, n0, nb, dx.data());
    }
  }
  return dx;
}

template <typename T>
Tensor<T> conv_weight_grad_forward(const Tensor<T>& x, const Tensor<T>& g, const ConvDims& d) {
  Tensor<T> dw(Shape{d.cout, d.cin, d.kh, d.kw});
  const auto& k = simd::kernels<T>();
  const int64_t chunk = chunk_size(d);
  AlignedVector<T> gm, col;
  for (int64_t n0 = 0; n0 < d.n; n0 += chunk) {
    const int64_t nb = std::min(chunk, d.n - n0);
    const int64_t cols = nb * d.hw_out();
    gm.resize(static_cast<size_t>(d.cout * cols));
    col.resize(static_cast<size_t>(d.k() * cols));
    nchw_to_cm(g.data(), d.cout, d.hw_out(), n0, nb, gm.data());
    if (is_pointwise(d)) {
      nchw_to_cm(x.data(), d.cin, d.hw_out(), n0, nb, col.data());
    } else {
      im2col(x.data(), d, n0, nb, col.data());
    }
    k.gemm(false, true, d.cout, d.k(), cols, T(1), gm.data(), cols, col.data(), cols, T(1), dw.data(), d.k());
  }
  return dw;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int rank = std::max(a.rank(), b.rank());
  auto pa = a.padded4();
  auto pb = b.padded4();
  int64_t dims[4];
  for (size_t i = 0; i < 4; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      dims[i] = pa[i];
    } else if (pa[i] == 1) {
      dims[i] = pb[i];
    } else {
      throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
    }
  }
  return Shape(std::span<const int64_t>(dims + (4 - rank), static_cast<size_t>(rank)));
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  return make_result<T>(
      binary_forward(a.value(), b.value(), BinOp::kAdd), {a, b},
      [sa, sb](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) -> std::vector<Var<T>> {
        return {needs[0] ? sum_to(g, sa) : Var<T>(), needs[1] ? sum_to(g, sb) : Var<T>()};
      },
      "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  return make_result<T>(
      binary_forward(a.value(), b.value(), BinOp::kSub), {a, b},
      [sa, sb](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) -> std::vector<Var<T>> {
        return {needs[0] ? sum_to(g, sa) : Var<T>(), needs[1] ? scale(sum_to(g, sb), T(-1)) : Var<T>()};
      },
      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_result<T>(
      binary_forward(a.value(), b.value(), BinOp::kMul), {a, b},
      [a, b](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) -> std::vector<Var<T>> {
        return {needs[0] ? sum_to(mul(g, b), a.shape()) : Var<T>(), needs[1] ? sum_to(mul(g, a), b.shape()) : Var<T>()};
      },
      "mul");
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out(x.shape());
  simd::kernels<T>().affine(x.numel(), s, x.value().data(), T(0), out.data());
  return make_result<T>(
      std::move(out), {x},
      [s](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> { return {scale(g, s)}; },
      "scale");
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  Tensor<T> out(x.shape());
  simd::kernels<T>().affine(x.numel(), T(1), x.value().data(), s, out.data());
  return make_result<T>(
      std::move(out), {x}, [](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {g};
      },
      "add_scalar");
}

template <typename T>
Var<T> pow_scalar(const Var<T>& x, T p) {
  if (p == T(0)) return Var<T>(Tensor<T>::ones(x.shape()));
  Tensor<T> out;
  if (p == T(1)) {
    out = x.value();
  } else if (p == T(2)) {
    out = map_unary(x.value(), [](T v) { return v * v; });
  } else if (p == T(-0.5)) {
    out = map_unary(x.value(), [](T v) { return T(1) / std::sqrt(v); });
  } else if (p == T(0.5)) {
    out = map_unary(x.value(), [](T v) { return std::sqrt(v); });
  } else {
    out = map_unary(x.value(), [p](T v) { return std::pow(v, p); });
  }
  return make_result<T>(
      std::move(out), {x},
      [x, p](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        if (p == T(1)) return {g};
        return {mul(g, scale(pow_scalar(x, p - T(1)), p))};
      },
      "pow");
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> mask = map_unary(x.value(), [](T v) { return v > T(0) ? T(1) : T(0); });
  Tensor<T> out(x.shape());
  simd::kernels<T>().mul(x.numel(), x.value().data(), mask.data(), out.data());
  Var<T> mask_var(std::move(mask));
  return make_result<T>(
      std::move(out), {x},
      [mask_var](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {mul(g, mask_var)};
      },
      "relu");
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> mask = map_unary(x.value(), [slope](T v) { return v > T(0) ? T(1) : slope; });
  Tensor<T> out(x.shape());
  simd::kernels<T>().mul(x.numel(), x.value().data(), mask.data(), out.data());
  Var<T> mask_var(std::move(mask));
  return make_result<T>(
      std::move(out), {x},
      [mask_var](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {mul(g, mask_var)};
      },
      "leaky_relu");
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return make_result<T>(
      map_unary(x.value(), [](T v) { return std::tanh(v); }), {x},
      [](const Var<T>& g, const Var<T>& y, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {mul(g, add_scalar(scale(mul(y, y), T(-1)), T(1)))};
      },
      "tanh");
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return make_result<T>(
      map_unary(x.value(), [](T v) { return T(1) / (T(1) + std::exp(-v)); }), {x},
      [](const Var<T>& g, const Var<T>& y, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {mul(g, mul(y, add_scalar(scale(y, T(-1)), T(1))))};
      },
      "sigmoid");
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return mul(x, sigmoid(x));
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

template <typename T>
Var<T> sum_to(const Var<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  Shape src = x.shape();
  return make_result<T>(
      sum_to_forward(x.value(), target), {x},
      [src](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {broadcast_to(g, src)};
      },
      "sum_to");
}

template <typename T>
Var<T> broadcast_to(const Var<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  Shape src = x.shape();
  return make_result<T>(
      broadcast_forward(x.value(), target), {x},
      [src](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {sum_to(g, src)};
      },
      "broadcast_to");
}

template <typename T>
Var<T> mean_to(const Var<T>& x, const Shape& target) {
  const int64_t tn = target.numel();
  if (tn == 0) throw ShapeError("mean_to: empty target");
  return scale(sum_to(x, target), static_cast<T>(static_cast<double>(tn) / static_cast<double>(x.numel())));
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  return sum_to(x, Shape{});
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <typename T>
Var<T> reshape(const Var<T>& x, const Shape& s) {
  if (x.shape() == s) return x;
  Shape src = x.shape();
  return make_result<T>(
      x.value().reshaped(s), {x},
      [src](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {reshape(g, src)};
      },
      "reshape");
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  if (xs.size() == 1) return xs[0];
  Shape out_shape = xs[0].shape();
  int64_t total = 0;
  for (const auto& x : xs) {
    if (x.shape().rank() != out_shape.rank()) throw ShapeError("concat rank mismatch");
    for (int i = 0; i < out_shape.rank(); ++i)
      if (i != axis && x.shape()[i] != out_shape[i])
        throw ShapeError("concat shape mismatch " + x.shape().str() + " vs " + out_shape.str());
    total += x.shape()[axis];
  }
  out_shape[axis] = total;
  Tensor<T> out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  int64_t offset = 0;
  std::vector<int64_t> starts;
  for (const auto& x : xs) {
    const AxisSplit xsplit = split_at(x.shape(), axis);
    const int64_t block = xsplit.axis * xsplit.inner;
    for (int64_t o = 0; o < os.outer; ++o) {
      const T* src = x.value().data() + o * block;
      std::copy(src, src + block, out.data() + (o * os.axis + offset) * os.inner);
    }
    starts.push_back(offset);
    offset += xsplit.axis;
  }
  std::vector<int64_t> lengths;
  for (const auto& x : xs) lengths.push_back(x.shape()[axis]);
  return make_result<T>(
      std::move(out), xs,
      [axis, starts, lengths](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) -> std::vector<Var<T>> {
        std::vector<Var<T>> grads(starts.size());
        for (size_t i = 0; i < starts.size(); ++i)
          if (needs[i]) grads[i] = slice(g, axis, starts[i], lengths[i]);
        return grads;
      },
      "concat");
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, int64_t start, int64_t length) {
  const Shape full = x.shape();
  const AxisSplit s = split_at(full, axis);
  if (start < 0 || length < 0 || start + length > s.axis) throw ShapeError("slice out of range on " + full.str());
  Shape out_shape = full;
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  for (int64_t o = 0; o < s.outer; ++o) {
    const T* src = x.value().data() + (o * s.axis + start) * s.inner;
    std::copy(src, src + length * s.inner, out.data() + o * length * s.inner);
  }
  return make_result<T>(
      std::move(out), {x},
      [full, axis, start](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {embed_slice(g, full, axis, start)};
      },
      "slice");
}

template <typename T>
Var<T> embed_slice(const Var<T>& x, const Shape& full, int axis, int64_t start) {
  const AxisSplit s = split_at(full, axis);
  const int64_t length = x.shape()[axis];
  if (start < 0 || start + length > s.axis) throw ShapeError("embed_slice out of range");
  Tensor<T> out(full);
  for (int64_t o = 0; o < s.outer; ++o) {
    const T* src = x.value().data() + o * length * s.inner;
    std::copy(src, src + length * s.inner, out.data() + (o * s.axis + start) * s.inner);
  }
  return make_result<T>(
      std::move(out), {x},
      [axis, start, length](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {slice(g, axis, start, length)};
      },
      "embed_slice");
}

// ---------------------------------------------------------------------------
// Matrix product

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2) throw ShapeError("matmul expects 2-D operands");
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t ka = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) throw ShapeError("matmul inner dim mismatch " + a.shape().str() + " x " + b.shape().str());
  Tensor<T> out(Shape{m, n});
  simd::kernels<T>().gemm(trans_a, trans_b, m, n, ka, T(1), a.value().data(), a.dim(1), b.value().data(), b.dim(1),
                          T(0), out.data(), n);
  return make_result<T>(
      std::move(out), {a, b},
      [a, b, trans_a, trans_b](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) -> std::vector<Var<T>> {
        Var<T> ga, gb;
        if (needs[0]) ga = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
        if (needs[1]) gb = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
        return {ga, gb};
      },
      "matmul");
}

// ---------------------------------------------------------------------------
// Convolution trio: each op's backward is expressed with the other two.

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, Conv2dGeometry geo) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), geo);
  return make_result<T>(
      conv_forward(x.value(), w.value(), d), {x, w},
      [x, w, geo](const Var<T>& g, const Var<T>&, const std::vector<bool>& needs) -> std::vector<Var<T>> {
        return {needs[0] ? conv2d_input_grad(g, w, x.shape(), geo) : Var<T>(),
                needs[1] ? conv2d_weight_grad(x, g, w.shape(), geo) : Var<T>()};
      },
      "conv2d");
}

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& grad_out, const Var<T>& w, const Shape& input_shape, Conv2dGeometry geo) {
  const ConvDims d = conv_dims(input_shape, w.shape(), geo);
  if (grad_out.shape() != Shape{d.n, d.cout, d.ho, d.wo}) throw ShapeError("conv2d_input_grad: grad shape mismatch");
  return make_result<T>(
      conv_input_grad_forward(grad_out.value(), w.value(), d), {grad_out, w},
      [grad_out, w, geo](const Var<T>& gg, const Var<T>&, const std::vector<bool>& needs) -> std::vector<Var<T>> {
        return {needs[0] ? conv2d(gg, w, geo) : Var<T>(),
                needs[1] ? conv2d_weight_grad(gg, grad_out, w.shape(), geo) : Var<T>()};
      },
      "conv2d_input_grad");
}

template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& grad_out, const Shape& weight_shape, Conv2dGeometry geo) {
  const ConvDims d = conv_dims(x.shape(), weight_shape, geo);
  if (grad_out.shape() != Shape{d.n, d.cout, d.ho, d.wo}) throw ShapeError("conv2d_weight_grad: grad shape mismatch");
  return make_result<T>(
      conv_weight_grad_forward(x.value(), grad_out.value(), d), {x, grad_out},
      [x, grad_out, geo](const Var<T>& gw, const Var<T>&, const std::vector<bool>& needs) -> std::vector<Var<T>> {
        return {needs[0] ? conv2d_input_grad(grad_out, gw, x.shape(), geo) : Var<T>(),
                needs[1] ? conv2d(x, gw, geo) : Var<T>()};
      },
      "conv2d_weight_grad");
}

// ---------------------------------------------------------------------------
// Resampling

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  if (x.shape().rank() != 4) throw ShapeError("upsample expects NCHW");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(Shape{n, c, 2 * h, 2 * w});
  const T* src = x.value().data();
  T* dst = out.data();
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t i = 0; i < h; ++i) {
      const T* srow = src + (p * h + i) * w;
      T* r0 = dst + (p * 2 * h + 2 * i) * 2 * w;
      T* r1 = r0 + 2 * w;
      for (int64_t j = 0; j < w; ++j) {
        r0[2 * j] = r0[2 * j + 1] = srow[j];
        r1[2 * j] = r1[2 * j + 1] = srow[j];
      }
    }
  return make_result<T>(
      std::move(out), {x}, [](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {sum_pool2x2(g)};
      },
      "upsample2x");
}

template <typename T>
Var<T> sum_pool2x2(const Var<T>& x) {
  if (x.shape().rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2) throw ShapeError("sum_pool2x2 expects even NCHW");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
  Tensor<T> out(Shape{n, c, h, w});
  const T* src = x.value().data();
  T* dst = out.data();
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t i = 0; i < h; ++i) {
      const T* r0 = src + (p * 2 * h + 2 * i) * 2 * w;
      const T* r1 = r0 + 2 * w;
      T* drow = dst + (p * h + i) * w;
      for (int64_t j = 0; j < w; ++j) drow[j] = r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1];
    }
  return make_result<T>(
      std::move(out), {x}, [](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {upsample_nearest2x(g)};
      },
      "sum_pool2x2");
}

template <typename T>
Var<T> gather_flat(const Var<T>& x, const std::vector<int64_t>& index, const Shape& out_shape) {
  if (out_shape.numel() != static_cast<int64_t>(index.size())) throw ShapeError("gather_flat: index/shape mismatch");
  Tensor<T> out(out_shape);
  const T* src = x.value().data();
  const int64_t n = x.numel();
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n) throw ShapeError("gather_flat: index out of range");
    out[static_cast<int64_t>(i)] = src[index[i]];
  }
  Shape src_shape = x.shape();
  auto idx = std::make_shared<const std::vector<int64_t>>(index);
  return make_result<T>(
      std::move(out), {x},
      [idx, src_shape](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {scatter_flat(g, *idx, src_shape)};
      },
      "gather_flat");
}

template <typename T>
Var<T> scatter_flat(const Var<T>& x, const std::vector<int64_t>& index, const Shape& out_shape) {
  if (x.numel() != static_cast<int64_t>(index.size())) throw ShapeError("scatter_flat: index/shape mismatch");
  Tensor<T> out(out_shape);
  const T* src = x.value().data();
  const int64_t n = out_shape.numel();
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n) throw ShapeError("scatter_flat: index out of range");
    out[index[i]] += src[i];
  }
  Shape src_shape = x.shape();
  auto idx = std::make_shared<const std::vector<int64_t>>(index);
  return make_result<T>(
      std::move(out), {x},
      [idx, src_shape](const Var<T>& g, const Var<T>&, const std::vector<bool>&) -> std::vector<Var<T>> {
        return {gather_flat(g, *idx, src_shape)};
      },
      "scatter_flat");
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int pad) {
  if (x.shape().rank() != 4) throw ShapeError("max_pool2d expects NCHW");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = (h + 2 * pad - kernel) / stride + 1;
  const int64_t wo = (w + 2 * pad - kernel) / stride + 1;
  std::vector<int64_t> index(static_cast<size_t>(n * c * ho * wo));
  const T* src = x.value().data();
  size_t k = 0;
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow) {
        int64_t best = -1;
        T best_v = -std::numeric_limits<T>::infinity();
        for (int ki = 0; ki < kernel; ++ki) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          for (int kj = 0; kj < kernel; ++kj) {
            const int64_t iw = ow * stride - pad + kj;
            if (iw < 0 || iw >= w) continue;
            const int64_t flat = (p * h + ih) * w + iw;
            if (best < 0 || src[flat] > best_v) {
              best = flat;
              best_v = src[flat];
            }
          }
        }
        index[k++] = best;
      }
  return gather_flat(x, index, Shape{n, c, ho, wo});
}

template <typename T>
Var<T> embedding_lookup(const Var<T>& table, const std::vector<int64_t>& ids) {
  if (table.shape().rank() != 2) throw ShapeError("embedding table must be 2-D");
  const int64_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int64_t> index;
  index.reserve(ids.size() * static_cast<size_t>(d));
  for (int64_t id : ids) {
    if (id < 0 || id >= vocab)
      throw std::out_of_range("embedding id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    for (int64_t j = 0; j < d; ++j) index.push_back(id * d + j);
  }
  return gather_flat(table, index, Shape{static_cast<int64_t>(ids.size()), d});
}

template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
  if (x.shape().rank() != 4) throw ShapeError("spatial_mean expects NCHW");
  return reshape(mean_to(x, Shape{x.dim(0), x.dim(1), 1, 1}), Shape{x.dim(0), x.dim(1)});
}

#define CROPSIM_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> scale(const Var<T>&, T);                                                          \
  template Var<T> add_scalar(const Var<T>&, T);                                                     \
  template Var<T> pow_scalar(const Var<T>&, T);                                                     \
  template Var<T> relu(const Var<T>&);                                                              \
  template Var<T> leaky_relu(const Var<T>&, T);                                                     \
  template Var<T> tanh(const Var<T>&);                                                              \
  template Var<T> sigmoid(const Var<T>&);                                                           \
  template Var<T> silu(const Var<T>&);                                                              \
  template Var<T> sum_to(const Var<T>&, const Shape&);                                              \
  template Var<T> broadcast_to(const Var<T>&, const Shape&);                                        \
  template Var<T> mean_to(const Var<T>&, const Shape&);                                             \
  template Var<T> sum(const Var<T>&);                                                               \
  template Var<T> mean(const Var<T>&);                                                              \
  template Var<T> reshape(const Var<T>&, const Shape&);                                            \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                          \
  template Var<T> slice(const Var<T>&, int, int64_t, int64_t);                                      \
  template Var<T> embed_slice(const Var<T>&, const Shape&, int, int64_t);                           \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                                 \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, Conv2dGeometry);                             \
  template Var<T> conv2d_input_grad(const Var<T>&, const Var<T>&, const Shape&, Conv2dGeometry);    \
  template Var<T> conv2d_weight_grad(const Var<T>&, const Var<T>&, const Shape&, Conv2dGeometry);   \
  template Var<T> upsample_nearest2x(const Var<T>&);                                                \
  template Var<T> sum_pool2x2(const Var<T>&);                                                       \
  template Var<T> gather_flat(const Var<T>&, const std::vector<int64_t>&, const Shape&);            \
  template Var<T> scatter_flat(const Var<T>&, const std::vector<int64_t>&, const Shape&);           \
  template Var<T> max_pool2d(const Var<T>&, int, int, int);                                         \
  template Var<T> embedding_lookup(const Var<T>&, const std::vector<int64_t>&);                     \
  template Var<T> spatial_mean(const Var<T>&);

CROPSIM_INSTANTIATE_OPS(float)
CROPSIM_INSTANTIATE_OPS(double)

#undef CROPSIM_INSTANTIATE_OPS

}  // namespace cropsim::ag
