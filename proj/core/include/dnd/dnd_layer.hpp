#pragma once

// Dynamic nested depth around one decoder layer: a token-choice router picks
// tokens from the layer's output, the picked tokens run through the same
// layer again as a compact subsequence with fresh positions, and the result
// is blended back with the first-pass output.

#include <cstdint>
#include <vector>

#include "dnd/ring_buffer.hpp"
#include "dnd/transformer.hpp"

namespace dnd {

struct RouterState {
    Tensor weight;  // [d_model, 1]
    Tensor bias;  // [1]
    Tensor beta;  // [1], fusion balance, kept in [0, 1]
    double tau = 0.5;
    RingBuffer<double> ratio_buffer;
    RingBuffer<double> topk_tau_buffer;

    static RouterState zero_init(std::size_t d_model, double beta_init, double tau_init, std::size_t buffer_capacity);
};

struct SelectionMask {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<double> probs;  // row-major [batch, seq_len]
    std::vector<std::uint8_t> mask;
    std::vector<std::size_t> selected_counts;  // per sequence

    std::size_t total_selected() const;
    std::size_t total_tokens() const { return batch * seq_len; }
    // Selected / total over the whole batch; 0 for an empty batch.
    double ratio() const;
};

struct PackedBatch {
    Tensor packed;  // [B, max_len, d], zero rows past each valid length
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::size_t max_len = 0;
    std::vector<std::size_t> lengths;
    // Original flat row (b * seq_len + i) -> packed flat row, or -1.
    std::vector<std::int64_t> scatter_index;
    // Packed flat row (b * max_len + j) -> original flat row, or -1 for padding.
    std::vector<std::int64_t> gather_index;
};

// Router pre-activation R(x) = x.w + b, shape [B, N].
Tensor router_logits(const RouterState& router, const Tensor& x_v);
// p = sigmoid(R(x)), one score per token, shape [B, N].
Tensor route(const RouterState& router, const Tensor& x_v);

// mask = p > tau, strictly.
SelectionMask build_mask(const Tensor& probs, double tau);

PackedBatch pack(const Tensor& x_v, const SelectionMask& mask);

// Runs `layer` over each sequence's packed tokens at positions 0..len-1.
// Padding rows stay zero and never enter attention.
Tensor nested_pass(const DecoderLayer& layer, const ModelConfig& cfg, const PackedBatch& packed,
                   FlopSink* flops = nullptr);

// Scatters packed rows back to their original positions; unselected rows are zero.
Tensor unpack(const Tensor& y_packed, const PackedBatch& packed);

Tensor fuse(const Tensor& x_v, const Tensor& x_d, const Tensor& probs, const SelectionMask& mask, const Tensor& beta);

struct DndLayerOutput {
    Tensor output;
    Tensor vanilla;
    Tensor logits;  // router pre-activations
    Tensor probs;
    SelectionMask mask;
};

struct DndFlops {
    FlopSink vanilla;
    FlopSink nested;
};

// route -> mask -> pack -> nested pass -> unpack -> fuse on top of one plain
// pass. `frozen_mask`, when given, replaces the threshold decision.
DndLayerOutput dnd_layer_forward(const DecoderLayer& layer, const ModelConfig& cfg, const RouterState& router,
                                 const Tensor& x, const PositionAssignment& positions, DndFlops* flops = nullptr,
                                 const SelectionMask* frozen_mask = nullptr);

}  // namespace dnd
