#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cbformer/tensor.hpp"

// Differentiable primitives. Every op records its reverse rule on the result
// node when any input requires a gradient; shape errors name the op and the
// offending shapes.
namespace cbf {

// Elementwise with NumPy broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor sqrt(const Tensor& x);

// a: [..., M, K] with b: [K, N], or a: [B, M, K] with b: [B, K, N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor softmax(const Tensor& x, int axis);

// Half-open range [begin, end) along axis.
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor stack(const std::vector<Tensor>& xs, int axis);
// Equal contiguous parts; concat(split(x, n, a), a) reproduces x.
std::vector<Tensor> split(const Tensor& x, std::size_t parts, int axis);

inline constexpr double kLayerNormEps = 1e-5;
// Normalizes over the last axis, no affine terms.
Tensor layer_norm(const Tensor& x, double eps = kLayerNormEps);

// out[i] = x[(i - shift) mod n] along axis; roll([1,2,3,4], 1) = [4,1,2,3].
Tensor roll(const Tensor& x, long shift, int axis);

// Centered moving average with edge replication; kernel must be odd.
Tensor moving_average(const Tensor& x, std::size_t kernel, int axis);
std::vector<double> avg_pool_moving(std::span<const double> series, std::size_t kernel);

Tensor mse_loss(const Tensor& pred, const Tensor& target);

// q, k: [B, L, E] -> [B, L]; r[b, tau] = mean_e sum_t q[b, t+tau, e] k[b, t, e]
// (circular), evaluated with real FFTs.
Tensor lag_correlation(const Tensor& q, const Tensor& k);

// Indices of the k largest entries of every row along the last axis,
// descending, ties resolved toward the lower index.
std::vector<std::size_t> topk_indices(const Tensor& x, std::size_t k);

// x: [B, L], idx: B*k row-major -> [B, k]
Tensor gather_last(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t k);

// v: [B, L, E], w: [B, k], lags: B*k -> out[b, t] = sum_i w[b, i] v[b, (t + lag_bi) mod L]
Tensor delay_aggregate(const Tensor& v, const Tensor& w, const std::vector<std::size_t>& lags);

}  // namespace cbf
