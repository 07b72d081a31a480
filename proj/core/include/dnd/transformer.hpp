#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dnd/ops.hpp"
#include "dnd/tensor.hpp"

namespace dnd {

struct ModelConfig {
    std::size_t vocab_size = 258;  // 256 byte values + BOS + EOS
    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t d_head = 32;
    std::size_t n_layers = 4;
    std::size_t d_ff = 352;
    std::size_t max_seq_len = 256;
    double rope_theta = 10000.0;
    double norm_eps = 1e-6;

    void validate() const;
};

// Strictly increasing per-token positions fed to the rotary encoding.
class PositionAssignment {
  public:
    PositionAssignment() = default;
    explicit PositionAssignment(std::vector<std::int64_t> positions);
    static PositionAssignment sequential(std::size_t n);

    std::size_t size() const { return positions_.size(); }
    std::span<const std::int64_t> values() const { return positions_; }

  private:
    std::vector<std::int64_t> positions_;
};

// Multiply-add counts of the two dominant blocks, in the same units the
// analytical model uses: attention 4*d_model*len^2 per sequence,
// feed-forward 6*len*d_model*d_ff.
struct FlopSink {
    double attention = 0.0;
    double ffn = 0.0;
    double total() const { return attention + ffn; }
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool decay = true;  // weight decay applies
};

struct DecoderLayer {
    Tensor attn_norm;  // [d]
    Tensor wq, wk, wv, wo;  // [d, d]
    Tensor ffn_norm;  // [d]
    Tensor w_gate, w_up;  // [d, d_ff]
    Tensor w_down;  // [d_ff, d]

    static DecoderLayer init(const ModelConfig& cfg, std::mt19937_64& rng);
    std::vector<NamedTensor> parameters(const std::string& prefix) const;
    void check_shapes(const ModelConfig& cfg) const;
};

// Pre-norm residual block over rows of x ([..., d_model]); `positions` has
// one entry per row and `segments` groups rows into causal sequences.
Tensor layer_forward_rows(const DecoderLayer& layer, const ModelConfig& cfg, const Tensor& x,
                          std::span<const std::int64_t> positions, const Segments& segments,
                          FlopSink* flops = nullptr);

// x: [B, N, d_model]; the same positions apply to every sequence.
Tensor layer_forward(const DecoderLayer& layer, const ModelConfig& cfg, const Tensor& x,
                     const PositionAssignment& positions, FlopSink* flops = nullptr);

}  // namespace dnd
