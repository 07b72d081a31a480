#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dnd/tensor.hpp"

namespace dnd {

// a: [..., k], b: [k, n] -> [..., n]. Leading dims of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// a: [..., n], bias: [n]
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);

// Reductions and normalizations over the last dimension.
Tensor sum_last(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
// p / sum(p) per row; rows must have positive sums.
Tensor normalize_rows(const Tensor& a);
Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps = 1e-6);

inline constexpr std::int64_t kIgnoreIndex = -1;

// Mean next-token cross entropy over all non-ignored targets.
// logits: [..., V]; targets: one id per row (or kIgnoreIndex).
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

// Row gather over a [..., d] tensor viewed as [R, d]. Index -1 yields a zero
// row. Gradients scatter-add back into the gathered rows; indices are inert.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows, Shape out_shape);

// table: [V, d]; checked lookup, returns [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);

// Rotary encoding on [T, n_heads * d_head] with one position per row.
Tensor rope(const Tensor& x, std::span<const std::int64_t> positions, std::size_t n_heads,
            double theta = 10000.0);

// Contiguous runs of rows that attend among themselves.
struct Segments {
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> lengths;

    static Segments uniform(std::size_t count, std::size_t length);
    std::size_t total_rows() const;
};

// Causal multi-head attention; q, k, v: [T, n_heads * d_head]. Row j of a
// segment attends rows 0..j of the same segment.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Segments& segments,
                        std::size_t n_heads);

// Gated blend for routed tokens. Rows with mask 1 become
// (beta*p) * x_v + (1 - beta*p) * x_d, rows with mask 0 copy x_v.
// x_v, x_d: [..., d]; probs: one entry per row; beta: [1].
Tensor fuse_gate(const Tensor& x_v, const Tensor& x_d, const Tensor& probs, std::span<const std::uint8_t> mask,
                 const Tensor& beta);

}  // namespace dnd
