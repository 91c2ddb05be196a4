#pragma once

#include "nst/tape.hpp"
#include "nst/tensor.hpp"

namespace nst {

enum class PoolKind { Max, Average };

// ---------------------------------------------------------------------------
// Value-level kernels. Each output element of conv2d is accumulated in the
// fixed order (in-channel, kernel row, kernel column) starting from zero, and
// the bias is added last; this order is part of the contract.
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weight,
                           const BasicTensor<Scalar>& bias, int stride, int padding);

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& input);

template <typename Scalar>
BasicTensor<Scalar> pool2d(const BasicTensor<Scalar>& input, PoolKind kind, int window,
                           int stride);

template <typename Scalar>
BasicTensor<Scalar> upsample_nearest(const BasicTensor<Scalar>& input, int factor);

/// Output extent of a strided window sweep; throws GeometryError if the
/// window does not fit or the result would be empty.
Index window_extent(Index size, int kernel, int stride, int padding, const char* what);

// ---------------------------------------------------------------------------
// Differentiable ops. Bias is a 1×1×1×outC tensor; weight is outC×inC×kH×kW.
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> conv2d(BasicVar<Scalar> input, BasicVar<Scalar> weight, BasicVar<Scalar> bias,
                        int stride, int padding);

template <typename Scalar>
BasicVar<Scalar> relu(BasicVar<Scalar> x);

/// Max-pool routes the gradient to the first maximum in row-major scan order.
template <typename Scalar>
BasicVar<Scalar> pool2d(BasicVar<Scalar> x, PoolKind kind, int window, int stride);

template <typename Scalar>
BasicVar<Scalar> upsample_nearest(BasicVar<Scalar> x, int factor);

template <typename Scalar>
BasicVar<Scalar> residual_add(BasicVar<Scalar> a, BasicVar<Scalar> b);

template <typename Scalar>
BasicVar<Scalar> sub(BasicVar<Scalar> a, BasicVar<Scalar> b);

template <typename Scalar>
BasicVar<Scalar> mul(BasicVar<Scalar> a, BasicVar<Scalar> b);

template <typename Scalar>
BasicVar<Scalar> div(BasicVar<Scalar> a, BasicVar<Scalar> b);

template <typename Scalar>
BasicVar<Scalar> scale(BasicVar<Scalar> x, Scalar factor);

template <typename Scalar>
BasicVar<Scalar> add_scalar(BasicVar<Scalar> x, Scalar offset);

template <typename Scalar>
BasicVar<Scalar> square(BasicVar<Scalar> x);

/// Sum of all elements, left to right in storage order.
template <typename Scalar>
BasicVar<Scalar> sum(BasicVar<Scalar> x);

template <typename Scalar>
BasicVar<Scalar> mean(BasicVar<Scalar> x);

template <typename Scalar>
BasicVar<Scalar> tanh(BasicVar<Scalar> x);

/// x / (1 + |x|)
template <typename Scalar>
BasicVar<Scalar> softsign(BasicVar<Scalar> x);

/// Softmax across the channel axis at every (n, h, w).
template <typename Scalar>
BasicVar<Scalar> softmax_channels(BasicVar<Scalar> x);

/// Softmax across the H·W positions of every (n, c) plane.
template <typename Scalar>
BasicVar<Scalar> softmax_spatial(BasicVar<Scalar> x);

/// Per-(n, c) mean over spatial positions; result is N×C×1×1.
template <typename Scalar>
BasicVar<Scalar> channel_mean(BasicVar<Scalar> x);

/// Per-(n, c) population standard deviation sqrt(var + eps²); N×C×1×1.
template <typename Scalar>
BasicVar<Scalar> channel_std(BasicVar<Scalar> x, Scalar epsilon);

/// Expands N×C×1×1 (or 1×1×1×1) to `shape`; the backward pass sums.
template <typename Scalar>
BasicVar<Scalar> broadcast_to(BasicVar<Scalar> x, Shape shape);

/// Euclidean norm of all elements. The gradient at the origin is taken as 0.
template <typename Scalar>
BasicVar<Scalar> l2_norm(BasicVar<Scalar> x);

template <typename Scalar>
BasicVar<Scalar> operator+(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  return residual_add(a, b);
}
template <typename Scalar>
BasicVar<Scalar> operator-(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  return sub(a, b);
}
template <typename Scalar>
BasicVar<Scalar> operator*(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  return mul(a, b);
}
template <typename Scalar>
BasicVar<Scalar> operator/(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  return div(a, b);
}
template <typename Scalar>
BasicVar<Scalar> operator*(Scalar factor, BasicVar<Scalar> x) {
  return scale(x, factor);
}

}  // namespace nst
