#pragma once

// Differentiable tensor ops. Binary elementwise ops broadcast numpy-style
// over rank <= 4. All ops are instantiated for float and double.

#include <cstdint>
#include <vector>

#include "cropsim/autograd.hpp"

namespace cropsim::ag {

// Shape of broadcasting a against b; throws ShapeError if incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> scale(const Var<T>& x, T s);
template <typename T> Var<T> add_scalar(const Var<T>& x, T s);
// x^p for real p; x must be positive unless p is a non-negative integer.
template <typename T> Var<T> pow_scalar(const Var<T>& x, T p);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> silu(const Var<T>& x);

// Sums x down to a broadcast-compatible target shape (inverse of broadcast_to).
template <typename T> Var<T> sum_to(const Var<T>& x, const Shape& target);
template <typename T> Var<T> broadcast_to(const Var<T>& x, const Shape& target);
template <typename T> Var<T> mean_to(const Var<T>& x, const Shape& target);
// Scalar (rank-0) total and mean.
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

template <typename T> Var<T> reshape(const Var<T>& x, const Shape& s);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, int axis);
template <typename T> Var<T> slice(const Var<T>& x, int axis, int64_t start, int64_t length);
// Places x into a zero tensor of `full` shape at offset `start` along axis.
template <typename T> Var<T> embed_slice(const Var<T>& x, const Shape& full, int axis, int64_t start);

// 2-D matrix product op(a) @ op(b).
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);

struct Conv2dGeometry {
  int stride = 1;
  int pad = 0;
};

// x: N x Cin x H x W, w: Cout x Cin x kh x kw -> N x Cout x Ho x Wo (no bias).
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, Conv2dGeometry geo);
// Gradient of conv2d with respect to its input, as a differentiable op.
template <typename T>
Var<T> conv2d_input_grad(const Var<T>& grad_out, const Var<T>& w, const Shape& input_shape, Conv2dGeometry geo);
// Gradient of conv2d with respect to its weight, as a differentiable op.
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& grad_out, const Shape& weight_shape, Conv2dGeometry geo);

template <typename T> Var<T> upsample_nearest2x(const Var<T>& x);
// Sum over non-overlapping 2x2 windows (adjoint of upsample_nearest2x).
template <typename T> Var<T> sum_pool2x2(const Var<T>& x);

// out.flat[i] = x.flat[index[i]]
template <typename T> Var<T> gather_flat(const Var<T>& x, const std::vector<int64_t>& index, const Shape& out_shape);
// out.flat[index[i]] += x.flat[i], out zero-initialised with out_shape.
template <typename T> Var<T> scatter_flat(const Var<T>& x, const std::vector<int64_t>& index, const Shape& out_shape);

// 2-D max pooling over NCHW (ties resolve to the first maximum in scan order).
template <typename T> Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int pad);

// Rows of `table` (V x D) selected by ids -> (ids.size() x D).
template <typename T> Var<T> embedding_lookup(const Var<T>& table, const std::vector<int64_t>& ids);

// Per-(N,C) spatial mean: N x C x H x W -> N x C.
template <typename T> Var<T> spatial_mean(const Var<T>& x);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

}  // namespace cropsim::ag
