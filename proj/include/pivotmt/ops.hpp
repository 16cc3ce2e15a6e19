#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pivotmt/rng.hpp"
#include "pivotmt/tensor.hpp"

namespace pivotmt {

// Matrix product of [m x k] and [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched products over a leading group axis: [g x m x k] * [g x k x n].
Tensor bmm(const Tensor& a, const Tensor& b);
// [g x m x k] * [g x n x k]^T -> [g x m x n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// Adds a vector along the last axis of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[rows x in] * w[in x out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Per-element w * a + (1 - w) * b, bounded by [min(a,b), max(a,b)] for w in
// [0, 1] (std::lerp semantics), exact when a == b.
Tensor mix(const Tensor& a, const Tensor& b, const Tensor& w);

Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);
// Softmax over the last axis of scores[g x q x k] where row (g, q) only sees
// its first visible[g * q_len + q] keys. Rows with no visible key are zero.
Tensor prefix_softmax(const Tensor& scores, std::span<const std::size_t> visible);

// Normalizes each row of x[rows x h].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

// [batch*len x heads*dh] <-> [batch*heads x len x dh]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads);

// Rows of table[vocab x h] selected by ids.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Inverted dropout with a mask drawn from rng; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over rows of label-smoothed negative log-likelihood.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets,
                            double label_smoothing = 0.0);
// Weighted sum of per-row smoothed NLL; rows with zero weight are ignored
// entirely (their targets are not range-checked).
Tensor cross_entropy_weighted(const Tensor& logits, std::span<const int> targets,
                              std::span<const double> weights, double label_smoothing);

}  // namespace pivotmt
