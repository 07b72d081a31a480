#include "dnd/model.hpp"

#include <random>

namespace dnd {

void DndSettings::validate(const ModelConfig& cfg) const {
    if (!enabled) return;
    if (!(l_start <= l_end && l_end < cfg.n_layers)) {
        throw ContractError("dnd layer range [" + std::to_string(l_start) + ", " + std::to_string(l_end) +
                            "] invalid for " + std::to_string(cfg.n_layers) + " layers");
    }
    if (!(tau_init > 0.0 && tau_init < 1.0)) throw ContractError("tau_init must lie in (0, 1)");
    if (!(beta_init >= 0.0 && beta_init <= 1.0)) throw ContractError("beta_init must lie in [0, 1]");
    if (buffer_capacity == 0) throw ContractError("buffer capacity must be at least 1");
}

DndSettings DndSettings::default_for(std::size_t n_layers) {
    DndSettings s;
    if (n_layers < 3) {
        s.l_start = 0;
        s.l_end = n_layers - 1;
        return s;
    }
    std::size_t keep = (n_layers + 5) / 6;
    if (2 * keep >= n_layers) keep = (n_layers - 1) / 2;
    s.l_start = keep;
    s.l_end = n_layers - 1 - keep;
    return s;
}

double FlopTally::vanilla_total() const {
    double t = 0.0;
    for (const auto& l : layers) t += l.vanilla.total();
    return t;
}

double FlopTally::nested_total() const {
    double t = 0.0;
    for (const auto& l : layers) t += l.nested.total();
    return t;
}

void FlopTally::clear() { layers.clear(); }

TransformerModel::TransformerModel(ModelConfig config, DndSettings dnd, std::uint64_t seed)
    : config_(config), dnd_(dnd) {
    config_.validate();
    dnd_.validate(config_);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    const std::size_t d = config_.d_model, v = config_.vocab_size;
    std::vector<double> emb(v * d);
    for (auto& x : emb) x = dist(rng);
    embedding_ = Tensor::from({v, d}, std::move(emb), true);
    for (std::size_t i = 0; i < config_.n_layers; ++i) layers_.push_back(DecoderLayer::init(config_, rng));
    final_norm_ = Tensor::full({d}, 1.0, true);
    std::vector<double> head(d * v);
    for (auto& x : head) x = dist(rng);
    head_ = Tensor::from({d, v}, std::move(head), true);
    // Routers are zero-initialized and draw nothing from the generator.
    if (dnd_.enabled) {
        for (std::size_t i = dnd_.l_start; i <= dnd_.l_end; ++i) {
            routers_.push_back(RouterState::zero_init(d, dnd_.beta_init, dnd_.tau_init, dnd_.buffer_capacity));
        }
    }
}

RouterState& TransformerModel::router_for_layer(std::size_t layer) {
    if (!dnd_.covers(layer)) throw ContractError("layer " + std::to_string(layer) + " has no router");
    return routers_.at(layer - dnd_.l_start);
}

std::vector<NamedTensor> TransformerModel::parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"embedding", embedding_, true});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto p = layers_[i].parameters("layers." + std::to_string(i) + ".");
        out.insert(out.end(), p.begin(), p.end());
    }
    for (std::size_t r = 0; r < routers_.size(); ++r) {
        const std::string prefix = "routers." + std::to_string(dnd_.l_start + r) + ".";
        out.push_back({prefix + "weight", routers_[r].weight, false});
        out.push_back({prefix + "bias", routers_[r].bias, false});
        out.push_back({prefix + "beta", routers_[r].beta, false});
    }
    out.push_back({"final_norm", final_norm_, false});
    out.push_back({"head", head_, true});
    return out;
}

std::size_t TransformerModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

ForwardResult TransformerModel::forward(std::span<const std::int64_t> tokens, std::size_t batch, std::size_t seq_len,
                                        const ForwardOptions& options) const {
    if (tokens.size() != batch * seq_len) {
        throw DimensionError("forward: " + std::to_string(tokens.size()) + " tokens for batch " + std::to_string(batch) +
                             " x " + std::to_string(seq_len));
    }
    if (seq_len == 0 || seq_len > config_.max_seq_len) {
        throw ContractError("forward: sequence length " + std::to_string(seq_len) + " outside [1, " +
                            std::to_string(config_.max_seq_len) + "]");
    }
    if (options.frozen_masks && options.frozen_masks->size() != dnd_.layer_count()) {
        throw ContractError("forward: expected one frozen mask per DND layer");
    }
    if (options.flops) options.flops->layers.assign(config_.n_layers, DndFlops{});

    const auto positions = PositionAssignment::sequential(seq_len);
    Tensor x = dnd::embedding(embedding_, tokens).reshape({batch, seq_len, config_.d_model});
    ForwardResult result;
    for (std::size_t i = 0; i < config_.n_layers; ++i) {
        DndFlops* flops = options.flops ? &options.flops->layers[i] : nullptr;
        if (!dnd_.covers(i)) {
            x = layer_forward(layers_[i], config_, x, positions, flops ? &flops->vanilla : nullptr);
            continue;
        }
        const std::size_t r = i - dnd_.l_start;
        const SelectionMask* frozen = options.frozen_masks ? &(*options.frozen_masks)[r] : nullptr;
        auto out = dnd_layer_forward(layers_[i], config_, routers_[r], x, positions, flops, frozen);
        x = out.output;
        result.traces.push_back({i, routers_[r].tau, out.logits, out.probs, std::move(out.mask)});
    }
    Tensor h = rms_norm(x, final_norm_, config_.norm_eps);
    result.logits = matmul(h, head_);
    return result;
}

}  // namespace dnd
