#include "dnd/dnd_layer.hpp"

#include <algorithm>
#include <numeric>

namespace dnd {

RouterState RouterState::zero_init(std::size_t d_model, double beta_init, double tau_init, std::size_t buffer_capacity) {
    if (!(tau_init > 0.0 && tau_init < 1.0)) throw ContractError("router: tau must lie in (0, 1)");
    RouterState r;
    r.weight = Tensor::zeros({d_model, 1}, true);
    r.bias = Tensor::zeros({1}, true);
    r.beta = Tensor::scalar(beta_init, true);
    r.tau = tau_init;
    r.ratio_buffer = RingBuffer<double>(buffer_capacity);
    r.topk_tau_buffer = RingBuffer<double>(buffer_capacity);
    return r;
}

std::size_t SelectionMask::total_selected() const {
    return std::accumulate(selected_counts.begin(), selected_counts.end(), std::size_t{0});
}

double SelectionMask::ratio() const {
    const auto total = total_tokens();
    return total ? static_cast<double>(total_selected()) / static_cast<double>(total) : 0.0;
}

Tensor router_logits(const RouterState& router, const Tensor& x_v) {
    if (x_v.rank() != 3) throw DimensionError("route: expected [B, N, d_model], got " + shape_to_string(x_v.shape()));
    Tensor logits = add_bias(matmul(x_v, router.weight), router.bias);
    return logits.reshape({x_v.dim(0), x_v.dim(1)});
}

Tensor route(const RouterState& router, const Tensor& x_v) { return sigmoid(router_logits(router, x_v)); }

SelectionMask build_mask(const Tensor& probs, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ContractError("build_mask: tau must lie in (0, 1), got " + std::to_string(tau));
    if (probs.rank() != 2) throw DimensionError("build_mask: expected [B, N] scores, got " + shape_to_string(probs.shape()));
    SelectionMask m;
    m.batch = probs.dim(0);
    m.seq_len = probs.dim(1);
    m.probs.assign(probs.data().begin(), probs.data().end());
    m.mask.resize(m.probs.size());
    m.selected_counts.assign(m.batch, 0);
    for (std::size_t b = 0; b < m.batch; ++b) {
        for (std::size_t i = 0; i < m.seq_len; ++i) {
            const std::size_t r = b * m.seq_len + i;
            m.mask[r] = m.probs[r] > tau ? 1 : 0;
            m.selected_counts[b] += m.mask[r];
        }
    }
    return m;
}

PackedBatch pack(const Tensor& x_v, const SelectionMask& mask) {
    if (x_v.rank() != 3 || x_v.dim(0) != mask.batch || x_v.dim(1) != mask.seq_len) {
        throw DimensionError("pack: hidden states " + shape_to_string(x_v.shape()) + " do not match a [" +
                             std::to_string(mask.batch) + "," + std::to_string(mask.seq_len) + "] mask");
    }
    PackedBatch p;
    p.batch = mask.batch;
    p.seq_len = mask.seq_len;
    p.lengths = mask.selected_counts;
    p.max_len = p.lengths.empty() ? 0 : *std::max_element(p.lengths.begin(), p.lengths.end());
    p.scatter_index.assign(p.batch * p.seq_len, -1);
    p.gather_index.assign(p.batch * p.max_len, -1);
    for (std::size_t b = 0; b < p.batch; ++b) {
        std::size_t j = 0;
        for (std::size_t i = 0; i < p.seq_len; ++i) {
            const std::size_t src = b * p.seq_len + i;
            if (!mask.mask[src]) continue;
            const std::size_t dst = b * p.max_len + j++;
            p.gather_index[dst] = static_cast<std::int64_t>(src);
            p.scatter_index[src] = static_cast<std::int64_t>(dst);
        }
    }
    p.packed = gather_rows(x_v, p.gather_index, {p.batch, p.max_len, x_v.dim(2)});
    return p;
}

Tensor nested_pass(const DecoderLayer& layer, const ModelConfig& cfg, const PackedBatch& packed, FlopSink* flops) {
    const std::size_t d = cfg.d_model;
    std::vector<std::int64_t> valid_rows, back_index(packed.batch * packed.max_len, -1), positions;
    Segments segments;
    for (std::size_t b = 0; b < packed.batch; ++b) {
        const std::size_t len = packed.lengths[b];
        if (len > packed.seq_len) throw ContractError("nested_pass: valid length exceeds sequence length");
        if (len == 0) continue;
        segments.offsets.push_back(valid_rows.size());
        segments.lengths.push_back(len);
        for (std::size_t j = 0; j < len; ++j) {
            back_index[b * packed.max_len + j] = static_cast<std::int64_t>(valid_rows.size());
            valid_rows.push_back(static_cast<std::int64_t>(b * packed.max_len + j));
            positions.push_back(static_cast<std::int64_t>(j));
        }
    }
    if (valid_rows.empty()) return Tensor::zeros({packed.batch, packed.max_len, d});
    Tensor flat = gather_rows(packed.packed, valid_rows, {valid_rows.size(), d});
    Tensor y = layer_forward_rows(layer, cfg, flat, positions, segments, flops);
    return gather_rows(y, back_index, {packed.batch, packed.max_len, d});
}

Tensor unpack(const Tensor& y_packed, const PackedBatch& packed) {
    const std::size_t d = packed.packed.dim(2);
    const Shape expected{packed.batch, packed.max_len, d};
    if (y_packed.shape() != expected || packed.scatter_index.size() != packed.batch * packed.seq_len) {
        throw ContractError("unpack: packed tensor " + shape_to_string(y_packed.shape()) +
                            " inconsistent with scatter map for " + shape_to_string(expected));
    }
    return gather_rows(y_packed, packed.scatter_index, {packed.batch, packed.seq_len, d});
}

Tensor fuse(const Tensor& x_v, const Tensor& x_d, const Tensor& probs, const SelectionMask& mask, const Tensor& beta) {
    return fuse_gate(x_v, x_d, probs, mask.mask, beta);
}

DndLayerOutput dnd_layer_forward(const DecoderLayer& layer, const ModelConfig& cfg, const RouterState& router,
                                 const Tensor& x, const PositionAssignment& positions, DndFlops* flops,
                                 const SelectionMask* frozen_mask) {
    DndLayerOutput out;
    out.vanilla = layer_forward(layer, cfg, x, positions, flops ? &flops->vanilla : nullptr);
    out.logits = router_logits(router, out.vanilla);
    out.probs = sigmoid(out.logits);
    if (frozen_mask) {
        if (frozen_mask->batch != x.dim(0) || frozen_mask->seq_len != x.dim(1)) {
            throw DimensionError("dnd_layer_forward: frozen mask does not match input " + shape_to_string(x.shape()));
        }
        out.mask = *frozen_mask;
        out.mask.probs.assign(out.probs.data().begin(), out.probs.data().end());
    } else {
        out.mask = build_mask(out.probs, router.tau);
    }
    if (out.mask.total_selected() == 0) {
        out.output = fuse(out.vanilla, Tensor::zeros(out.vanilla.shape()), out.probs, out.mask, router.beta);
        return out;
    }
    PackedBatch packed = pack(out.vanilla, out.mask);
    Tensor nested = nested_pass(layer, cfg, packed, flops ? &flops->nested : nullptr);
    Tensor x_d = unpack(nested, packed);
    out.output = fuse(out.vanilla, x_d, out.probs, out.mask, router.beta);
    return out;
}

}  // namespace dnd
