#include "dnd/transformer.hpp"

#include <cmath>

namespace dnd {

void ModelConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_heads == 0 || d_head == 0 || n_layers == 0 || d_ff == 0) {
        throw ContractError("model config: all sizes must be positive");
    }
    if (n_heads * d_head != d_model) {
        throw ContractError("model config: n_heads * d_head (" + std::to_string(n_heads * d_head) +
                            ") must equal d_model (" + std::to_string(d_model) + ")");
    }
    if (d_head % 2 != 0) throw ContractError("model config: d_head must be even for rotary encoding");
    if (max_seq_len < 2) throw ContractError("model config: max_seq_len must be at least 2");
}

PositionAssignment::PositionAssignment(std::vector<std::int64_t> positions) : positions_(std::move(positions)) {
    for (std::size_t i = 1; i < positions_.size(); ++i) {
        if (positions_[i] <= positions_[i - 1]) throw ContractError("positions must be strictly increasing");
    }
}

PositionAssignment PositionAssignment::sequential(std::size_t n) {
    std::vector<std::int64_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::int64_t>(i);
    return PositionAssignment(std::move(p));
}

namespace {

Tensor normal_param(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), true);
}

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
    if (!t.defined() || t.shape() != shape) {
        throw DimensionError(std::string("decoder layer: ") + name + " has shape " +
                             (t.defined() ? shape_to_string(t.shape()) : "<undefined>") + ", expected " +
                             shape_to_string(shape));
    }
}

}  // namespace

DecoderLayer DecoderLayer::init(const ModelConfig& cfg, std::mt19937_64& rng) {
    const std::size_t d = cfg.d_model, f = cfg.d_ff;
    const double std_in = 0.02;
    const double std_out = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
    DecoderLayer l;
    l.attn_norm = Tensor::full({d}, 1.0, true);
    l.wq = normal_param({d, d}, std_in, rng);
    l.wk = normal_param({d, d}, std_in, rng);
    l.wv = normal_param({d, d}, std_in, rng);
    l.wo = normal_param({d, d}, std_out, rng);
    l.ffn_norm = Tensor::full({d}, 1.0, true);
    l.w_gate = normal_param({d, f}, std_in, rng);
    l.w_up = normal_param({d, f}, std_in, rng);
    l.w_down = normal_param({f, d}, std_out, rng);
    return l;
}

std::vector<NamedTensor> DecoderLayer::parameters(const std::string& prefix) const {
    return {
        {prefix + "attn_norm", attn_norm, false}, {prefix + "wq", wq, true},
        {prefix + "wk", wk, true},                {prefix + "wv", wv, true},
        {prefix + "wo", wo, true},                {prefix + "ffn_norm", ffn_norm, false},
        {prefix + "w_gate", w_gate, true},        {prefix + "w_up", w_up, true},
        {prefix + "w_down", w_down, true},
    };
}

void DecoderLayer::check_shapes(const ModelConfig& cfg) const {
    const std::size_t d = cfg.d_model, f = cfg.d_ff;
    expect_shape(attn_norm, {d}, "attn_norm");
    expect_shape(wq, {d, d}, "wq");
    expect_shape(wk, {d, d}, "wk");
    expect_shape(wv, {d, d}, "wv");
    expect_shape(wo, {d, d}, "wo");
    expect_shape(ffn_norm, {d}, "ffn_norm");
    expect_shape(w_gate, {d, f}, "w_gate");
    expect_shape(w_up, {d, f}, "w_up");
    expect_shape(w_down, {f, d}, "w_down");
}

Tensor layer_forward_rows(const DecoderLayer& layer, const ModelConfig& cfg, const Tensor& x,
                          std::span<const std::int64_t> positions, const Segments& segments, FlopSink* flops) {
    if (x.rank() < 2 || x.shape().back() != cfg.d_model) {
        throw DimensionError("layer_forward: input " + shape_to_string(x.shape()) + " does not end in d_model=" +
                             std::to_string(cfg.d_model));
    }
    const std::size_t rows = x.numel() / cfg.d_model;
    if (positions.size() != rows) {
        throw ContractError("layer_forward: " + std::to_string(positions.size()) + " positions for " +
                            std::to_string(rows) + " tokens");
    }
    if (segments.total_rows() != rows) throw ContractError("layer_forward: segments do not cover every token");

    Tensor h = rms_norm(x, layer.attn_norm, cfg.norm_eps);
    Tensor q = rope(matmul(h, layer.wq), positions, cfg.n_heads, cfg.rope_theta);
    Tensor k = rope(matmul(h, layer.wk), positions, cfg.n_heads, cfg.rope_theta);
    Tensor v = matmul(h, layer.wv);
    Tensor attn = matmul(causal_attention(q, k, v, segments, cfg.n_heads), layer.wo);
    Tensor mid = add(x, attn);

    Tensor h2 = rms_norm(mid, layer.ffn_norm, cfg.norm_eps);
    Tensor gated = mul(silu(matmul(h2, layer.w_gate)), matmul(h2, layer.w_up));
    Tensor out = add(mid, matmul(gated, layer.w_down));

    if (flops) {
        const auto d = static_cast<double>(cfg.d_model);
        for (auto len : segments.lengths) {
            const auto n = static_cast<double>(len);
            flops->attention += 4.0 * d * n * n;
        }
        flops->ffn += 6.0 * static_cast<double>(rows) * d * static_cast<double>(cfg.d_ff);
    }
    return out;
}

Tensor layer_forward(const DecoderLayer& layer, const ModelConfig& cfg, const Tensor& x,
                     const PositionAssignment& positions, FlopSink* flops) {
    if (x.rank() != 3) throw DimensionError("layer_forward: expected [B, N, d_model], got " + shape_to_string(x.shape()));
    const std::size_t batch = x.dim(0), n = x.dim(1);
    if (positions.size() != n) {
        throw ContractError("layer_forward: " + std::to_string(positions.size()) + " positions for sequence length " +
                            std::to_string(n));
    }
    if (n > cfg.max_seq_len) {
        throw ContractError("layer_forward: sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                            std::to_string(cfg.max_seq_len));
    }
    std::vector<std::int64_t> all;
    all.reserve(batch * n);
    for (std::size_t b = 0; b < batch; ++b) all.insert(all.end(), positions.values().begin(), positions.values().end());
    return layer_forward_rows(layer, cfg, x, all, Segments::uniform(batch, n), flops);
}

}  // namespace dnd
