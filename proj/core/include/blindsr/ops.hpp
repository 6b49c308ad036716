#pragma once

#include <optional>
#include <vector>

#include "blindsr/tensor.hpp"

namespace blindsr {

// Elementwise ops broadcast with standard trailing-dimension semantics.

enum class EwOp { Add, Sub, Mul, Div, Exp, Sqrt, LeakyRelu, Gelu, Sigmoid };

constexpr double kLeakyReluSlope = 0.2;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = kLeakyReluSlope);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Uniform entry point over the op set; unary ops reject a second argument.
Tensor elementwise(EwOp op, const Tensor& a,
                   const std::optional<Tensor>& b = std::nullopt);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor abs_val(const Tensor& a);  // subgradient 0 at the kink

// Broadcast shape of two operands (throws on incompatibility).
Shape broadcast_shape(const Shape& a, const Shape& b);

// Reductions.
Tensor sum(const Tensor& a);   // -> shape []
Tensor mean(const Tensor& a);  // -> shape []
Tensor sum_axis(const Tensor& a, int64_t axis, bool keepdims);
Tensor mean_axis(const Tensor& a, int64_t axis, bool keepdims);

// Batched matrix product: [..,m,k] x [..,k,n] -> [..,m,n], batch dims
// broadcast. Rank-1 operands are promoted like numpy's matmul.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax_lastdim(const Tensor& a);

// Shape ops (all copy; backward restores the original layout).
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose_axes(const Tensor& a, int64_t ax0, int64_t ax1);
Tensor slice_axis(const Tensor& a, int64_t axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
Tensor flip_last2(const Tensor& a);

// Composites used by the denoiser.
Tensor layer_norm_channel(const Tensor& x, double eps = 1e-6);  // [b,c,h,w], per-position over c
Tensor l2_normalize_lastdim(const Tensor& x, double eps = 1e-12);
Tensor global_avg_pool(const Tensor& x);  // [b,c,h,w] -> [b,c]

}  // namespace blindsr
