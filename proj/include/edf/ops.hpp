#pragma once

#include <cstddef>
#include <vector>

#include "edf/tensor.hpp"

// Differentiable tensor ops. Each op records itself on the active tape when
// any input is attached to it; the recorded backward is expressed with these
// same ops, which makes gradients differentiable again. Every result is
// checked for NaN/Inf and throws NonFiniteError.

namespace edf {

// Elementwise, numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }

Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sums broadcast axes away so the result has `shape` (adjoint of broadcast_to).
Tensor sum_to(const Tensor& x, const Shape& shape);

Tensor reshape(const Tensor& x, const Shape& shape);
/// [B, ...] -> [B, prod(...)]
Tensor flatten(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over the last axis of a rank-2 tensor, keeping it: [B, K] -> [B, 1].
Tensor sum_rows(const Tensor& x);
/// sum(x * x), a scalar.
Tensor sum_of_squares(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

/// x [B,Cin,H,W], w [Cout,Cin,KH,KW], stride 1, symmetric zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t pad);
Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, const Shape& input_shape,
                         std::size_t pad);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, const Shape& weight_shape,
                          std::size_t pad);

/// Non-overlapping k x k average pooling on [B,C,H,W]; trailing rows and
/// columns that do not fill a window are ignored.
Tensor avg_pool2d(const Tensor& x, std::size_t k);
Tensor avg_pool2d_backward(const Tensor& g, std::size_t k, const Shape& input_shape);
Tensor max_pool2d(const Tensor& x, std::size_t k);

/// out[j] = x[index[j]] over the flattened input.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& index, const Shape& out_shape);
/// out[index[j]] += x[j], zero elsewhere; adjoint of gather.
Tensor scatter_add(const Tensor& x, const std::vector<std::size_t>& index, const Shape& out_shape);

/// Rows of x along axis 0.
Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows);
/// Adjoint of take_rows: result has `n` rows, row rows[j] += x[j].
Tensor put_rows(const Tensor& x, const std::vector<std::size_t>& rows, std::size_t n);

/// Row-wise log-softmax / softmax of [B, K].
Tensor log_softmax(const Tensor& z);
Tensor softmax(const Tensor& z);
/// mean over rows of -sum_k q[b,k] log softmax(z)[b,k].
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets);

}  // namespace edf
