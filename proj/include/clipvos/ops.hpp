#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "clipvos/tensor.hpp"

namespace clipvos {

// Differentiable op set. Every op checks operand shapes and throws ShapeError
// naming itself and the offending shapes. No implicit broadcasting.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false);

// [batch x m x k] @ [batch x k x n]
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

// a [n x m] @ b [m x c], one row of a at a time with zero entries of a
// skipped. Each output row depends only on its own row of a, so results do
// not change with the number of rows.
template <typename T>
Tensor<T> row_matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);

// x: [B x Cin x H x W], weight: [Cout x Cin x kh x kw], bias: [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);

// Bilinear, half-pixel centers (align_corners = false). x: [B x C x H x W].
template <typename T>
Tensor<T> upsample_bilinear_2x(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Softmax over the last axis restricted to entries with keep[i] != 0; the
// rest are exactly zero. A row with no kept entry is all zeros.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const std::vector<std::uint8_t>& keep);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// x: [... x in], weight: [out x in], bias: [out] or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
// Sum over one axis, which is removed (a rank-1 input yields shape [1]).
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);

// Row gather from a [n x c] matrix. Index -1 produces a zero row.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& index);

// Negative squared Euclidean distance between rows: [n x c], [m x c] -> [n x m].
template <typename T>
Tensor<T> neg_sq_dist(const Tensor<T>& a, const Tensor<T>& b);

// Multi-object probability merge. probs: [K x ...] object probabilities,
// returns [(K+1) x ...] with channel 0 the background.
template <typename T>
Tensor<T> soft_aggregate(const Tensor<T>& probs, T eps = T(1e-7));

// Top-k keep mask per row of a [n x m] matrix; ties keep the lower index.
template <typename T>
std::vector<std::uint8_t> topk_mask(const Tensor<T>& x, std::size_t k);

// Index of the largest entry along axis 0 (lowest index on ties):
// [C x ...] -> flat labels for the remaining axes.
template <typename T>
std::vector<std::uint8_t> argmax_axis0(const Tensor<T>& x);

}  // namespace clipvos
