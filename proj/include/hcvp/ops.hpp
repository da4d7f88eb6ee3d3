#pragma once

#include <cstddef>
#include <vector>

#include "hcvp/tensor.hpp"

namespace hcvp {

// Elementwise arithmetic. `add` broadcasts b when b's shape is a suffix of a's
// shape (bias rows, positional tables); the other binary ops need equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor relu(const Tensor& x);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// Softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& x);

/// Log-softmax over the last axis. When `keep` is non-empty it must have the
/// same length as x; entries with keep==false are excluded from the
/// normalizer and their outputs are 0 with no gradient.
Tensor log_softmax(const Tensor& x, const std::vector<bool>& keep = {});

/// Layer normalization over the last axis with learned gamma/beta of width d.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Rows of a 2-D tensor scaled to unit L2 norm (norm floored at eps).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

/// [m x k] . [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over the leading axis: [g x m x k] . [g x k x n], or with
/// transpose_b: [g x m x k] . [g x n x k]^T.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// Scaled dot-product self-attention over packed projections.
/// qkv [b x T x 3d] holds [queries | keys | values]; head h owns columns
/// [h*d/heads, (h+1)*d/heads) of each third. Returns [b x T x d]. When
/// `weights` is given it receives the (tape-free) [b*heads x T x T] softmax.
Tensor multi_head_attention(const Tensor& qkv, std::size_t heads, Tensor* weights = nullptr);

/// x[..., in] . w[in x out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Direct cross-correlation. input [b x c x h x w], kernel [o x c x kh x kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// [b x c x h x w] -> [b x c]
Tensor global_avg_pool(const Tensor& x);
/// [b x c] -> [b x c x h x w], constant over space.
Tensor spatial_broadcast(const Tensor& x, std::size_t height, std::size_t width);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// 2-D transpose.
Tensor transpose(const Tensor& x);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// [n x d], [n x d] -> [n]
Tensor row_dot(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces one axis away.
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

} // namespace hcvp
