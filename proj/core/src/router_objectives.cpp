#include "dnd/router_objectives.hpp"

#include "dnd/ops.hpp"

namespace dnd {

namespace {

void require_scores(const Tensor& p) {
    if (p.rank() != 2) throw DimensionError("router loss: expected [B, N] scores, got " + shape_to_string(p.shape()));
}

Tensor layer_dispersion(const Tensor& p) {
    require_scores(p);
    const std::size_t batch = p.dim(0);
    if (batch == 0 || p.dim(1) == 0) return Tensor::scalar(0.0);
    Tensor normalized = normalize_rows(p);
    return scale(sum(mul(normalized, log(normalized))), 1.0 / static_cast<double>(batch));
}

Tensor layer_preservation(const Tensor& p) {
    require_scores(p);
    if (p.numel() == 0) return Tensor::scalar(0.0);
    return mean(square(add_scalar(p, -0.5)));
}

template <typename PerLayer>
Tensor summed(const std::vector<Tensor>& layers, PerLayer per_layer, std::vector<double>* values = nullptr) {
    Tensor total = Tensor::scalar(0.0);
    for (const auto& p : layers) {
        Tensor term = per_layer(p);
        if (values) values->push_back(term.item());
        total = add(total, term);
    }
    return total;
}

}  // namespace

Tensor score_dispersion_loss(const std::vector<Tensor>& probs_per_layer) {
    return summed(probs_per_layer, layer_dispersion);
}

Tensor distribution_preservation_loss(const std::vector<Tensor>& probs_per_layer) {
    return summed(probs_per_layer, layer_preservation);
}

Tensor router_z_loss(const std::vector<Tensor>& logits_per_layer) {
    return summed(logits_per_layer, [](const Tensor& z) {
        require_scores(z);
        return z.numel() ? mean(square(z)) : Tensor::scalar(0.0);
    });
}

LossBreakdown combined_loss(const Tensor& ce, const std::vector<Tensor>& probs_per_layer,
                            const RouterLossWeights& weights, const std::vector<Tensor>& logits_per_layer) {
    if (weights.lambda_sd < 0.0 || weights.lambda_dp < 0.0 || weights.lambda_z < 0.0) {
        throw ContractError("router loss weights must be non-negative");
    }
    if (ce.numel() != 1) throw ContractError("combined_loss: cross entropy must be a scalar");
    LossBreakdown out;
    Tensor l_sd = summed(probs_per_layer, layer_dispersion, &out.per_layer_sd);
    Tensor l_dp = summed(probs_per_layer, layer_preservation, &out.per_layer_dp);
    Tensor l_router = add(scale(l_sd, weights.lambda_sd), scale(l_dp, weights.lambda_dp));
    if (weights.lambda_z > 0.0) {
        Tensor l_z = router_z_loss(logits_per_layer);
        out.l_z = l_z.item();
        l_router = add(l_router, scale(l_z, weights.lambda_z));
    }
    out.total_tensor = add(ce, l_router);
    out.ce = ce.item();
    out.l_sd = l_sd.item();
    out.l_dp = l_dp.item();
    out.l_router = l_router.item();
    out.total = out.total_tensor.item();
    return out;
}

}  // namespace dnd
