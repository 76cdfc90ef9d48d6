#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crossfuse/tensor.hpp"

// Differentiable primitives. Every op copies its result into a fresh tensor
// (no aliasing views) and, when grad mode is on and an input requires grad,
// records a backward closure on the result node.
namespace crossfuse {

/// [m x k] . [k x n] -> [m x n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x . W + b for x [S x F], W [F x N], b [N]; b may be undefined (no bias).
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Elementwise product of equally shaped tensors.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
/// Exact (erf-based) GeLU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

/// Sum of all elements -> rank-0 tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
/// Arithmetic mean over one axis; the axis is removed from the shape.
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis);
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, std::size_t axis);
inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) { return concat<float>(xs, axis); }

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
/// [..., A, B] -> [..., A*B]
template <typename T>
BasicTensor<T> flatten_last_two(const BasicTensor<T>& x);
/// [..., A, B] -> [..., B, A]
template <typename T>
BasicTensor<T> transpose_last_two(const BasicTensor<T>& x);

/// Softmax over the last axis, max-subtracted.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x);

/// Normalises each row over the last axis (population variance), then gain/bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          T eps = T(1e-5));

/// x [C x H x W], w [Co x C x k x k], b [Co] -> [Co x H' x W'], zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      std::size_t stride, std::size_t padding);

/// x [C x L], w [Co x C x k], b [Co] -> [Co x L'], no padding.
template <typename T>
BasicTensor<T> conv1d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      std::size_t stride);

}  // namespace crossfuse
