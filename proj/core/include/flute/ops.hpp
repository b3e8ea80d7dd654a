#pragma once

#include <cstddef>
#include <span>

#include "flute/tensor.hpp"

// Differentiable primitives. Every op checks that its inputs live on the same
// tape and that shapes agree exactly; there is no implicit broadcasting.
namespace flute::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
/// a * s for a scalar tensor s.
Var mul_scalar(const Var& a, const Var& s);
Var relu(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);

/// Rows [begin, end) of a tensor along its first axis.
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);

/// Cross-correlation of NCHW input with OIHW kernel.
Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding);

/// 2x2 max pooling with stride 2 (odd trailing rows/cols are dropped).
Var max_pool2x2(const Var& input);

/// [B,C,H,W] -> [B,C].
Var global_avg_pool(const Var& input);

/// [B,E] -> [E]. Each coordinate is summed over rows in ascending value
/// order, so the result is bit-identical under any permutation of the rows.
Var mean_over_rows(const Var& input);

/// a [B,D] times b [K,D]^T -> [B,K].
Var matmul_nt(const Var& a, const Var& b);

/// x [B,E] W^T + bias, W [M,E], bias [M] -> [B,M].
Var linear(const Var& x, const Var& weight, const Var& bias);

/// v / sqrt(|v|^2 + eps^2) along `axis` (tensor of rank 1 or 2).
Var l2_normalize(const Var& v, std::size_t axis, double eps = 1e-8);

/// Mean-reduced softmax cross entropy against one-hot rows.
Var softmax_cross_entropy(const Var& logits, const Tensor& one_hot);

/// Per-class mean of feature rows. labels[i] in [0, classes).
Var class_means(const Var& features, std::span<const std::size_t> labels, std::size_t classes);

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

}  // namespace flute::ops
