#pragma once

#include <vector>

#include "dnd/tensor.hpp"

namespace dnd {

struct RouterLossWeights {
    double lambda_sd = 3e-4;
    double lambda_dp = 0.02;
    // Optional ablation: mean squared router logit. Off by default.
    double lambda_z = 0.0;
};

struct LossBreakdown {
    Tensor total_tensor;  // differentiable total
    double ce = 0.0;
    double l_sd = 0.0;
    double l_dp = 0.0;
    double l_z = 0.0;
    double l_router = 0.0;
    double total = 0.0;
    std::vector<double> per_layer_sd;
    std::vector<double> per_layer_dp;
};

// Negative entropy of each sequence's scores normalized to sum 1, averaged
// over sequences and summed over layers. probs: one [B, N] tensor per layer.
Tensor score_dispersion_loss(const std::vector<Tensor>& probs_per_layer);

// Mean of (p - 0.5)^2 per layer, summed over layers.
Tensor distribution_preservation_loss(const std::vector<Tensor>& probs_per_layer);

// Mean squared pre-sigmoid router logit per layer, summed over layers.
Tensor router_z_loss(const std::vector<Tensor>& logits_per_layer);

// total = ce + lambda_sd * L_sd + lambda_dp * L_dp (+ lambda_z * L_z).
LossBreakdown combined_loss(const Tensor& ce, const std::vector<Tensor>& probs_per_layer,
                            const RouterLossWeights& weights = {},
                            const std::vector<Tensor>& logits_per_layer = {});

}  // namespace dnd
