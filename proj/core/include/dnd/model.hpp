#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dnd/dnd_layer.hpp"
#include "dnd/transformer.hpp"

namespace dnd {

struct DndSettings {
    bool enabled = true;
    std::size_t l_start = 1;
    std::size_t l_end = 2;
    double beta_init = 0.1;
    double tau_init = 0.5;
    std::size_t buffer_capacity = 5;

    std::size_t layer_count() const { return enabled ? l_end - l_start + 1 : 0; }
    bool covers(std::size_t layer) const { return enabled && layer >= l_start && layer <= l_end; }
    void validate(const ModelConfig& cfg) const;

    // Keeps ceil(n/6) plain layers at each end (at least one when n >= 4).
    static DndSettings default_for(std::size_t n_layers);
};

struct LayerTrace {
    std::size_t layer = 0;
    double tau = 0.0;
    Tensor logits;
    Tensor probs;
    SelectionMask mask;
};

struct ForwardResult {
    Tensor logits;  // [B, N, vocab]
    std::vector<LayerTrace> traces;  // one per DND layer, in layer order
};

// Per-layer op counts for one or more forward passes.
struct FlopTally {
    std::vector<DndFlops> layers;

    double vanilla_total() const;
    double nested_total() const;
    void clear();
};

struct ForwardOptions {
    FlopTally* flops = nullptr;
    // One frozen mask per DND layer replaces the threshold decision.
    const std::vector<SelectionMask>* frozen_masks = nullptr;
};

class TransformerModel {
  public:
    TransformerModel(ModelConfig config, DndSettings dnd, std::uint64_t seed);

    // tokens: row-major [batch, seq_len].
    ForwardResult forward(std::span<const std::int64_t> tokens, std::size_t batch, std::size_t seq_len,
                          const ForwardOptions& options = {}) const;

    const ModelConfig& config() const { return config_; }
    const DndSettings& dnd() const { return dnd_; }
    DndSettings& mutable_dnd() { return dnd_; }

    std::vector<NamedTensor> parameters() const;
    std::size_t parameter_count() const;

    const DecoderLayer& layer(std::size_t i) const { return layers_.at(i); }
    DecoderLayer& mutable_layer(std::size_t i) { return layers_.at(i); }
    std::vector<RouterState>& routers() { return routers_; }
    const std::vector<RouterState>& routers() const { return routers_; }
    RouterState& router_for_layer(std::size_t layer);

    const Tensor& embedding() const { return embedding_; }
    const Tensor& final_norm() const { return final_norm_; }
    const Tensor& head() const { return head_; }

  private:
    ModelConfig config_;
    DndSettings dnd_;
    Tensor embedding_;  // [V, d]
    std::vector<DecoderLayer> layers_;
    std::vector<RouterState> routers_;  // l_start..l_end
    Tensor final_norm_;  // [d]
    Tensor head_;  // [d, V]
};

}  // namespace dnd
