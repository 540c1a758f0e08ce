#pragma once

#include "curio/tensor.hpp"

#include <span>

// Differentiable free functions over Tensor. Every op validates shapes,
// rejects non-finite results with the op name, and records a backward closure
// when grad mode is on and any input requires grad.

namespace curio {

// x (N, in), weight (out, in), bias (out) -> (N, out)
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x (N, C, H, W), weight (O, C, k, k), bias (O) -> (N, O, Ho, Wo), no padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index stride);

// Non-overlapping average pooling over the trailing two dims; window 0 pools
// the whole spatial extent to 1x1.
Tensor spatial_mean_pool(const Tensor& x, Index window);

// Per-sample, per-channel normalization over the spatial dims of (N, C, H, W).
Tensor instance_norm(const Tensor& x, Scalar eps = 1e-5);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// (N, ...) -> (N, prod(...))
Tensor flatten(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, Scalar c);
Tensor mul_scalar(const Tensor& x, Scalar c);
Tensor clamp(const Tensor& x, Scalar lo, Scalar hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// (N, F) -> (N)
Tensor row_sum(const Tensor& x);
Tensor row_mean(const Tensor& x);

// Rows [begin, begin + count) of a rank>=1 tensor.
Tensor slice_rows(const Tensor& x, Index begin, Index count);

// Row-wise log-softmax of (N, K).
Tensor log_softmax(const Tensor& x);
// out[i] = x(i, index[i]) for (N, K) input.
Tensor gather(const Tensor& x, std::span<const int> index);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(Scalar c, const Tensor& x) { return mul_scalar(x, c); }

/// Mean squared error; `target` is treated as a constant.
Tensor mse(const Tensor& prediction, const Tensor& target);

/// Rescales grads in place so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
Scalar clip_grad_norm(std::span<Tensor> params, Scalar max_norm);

}  // namespace curio
