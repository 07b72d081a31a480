#include "dnd/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace dnd {

double cosine_lr(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
        return cfg.lr_max * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    const std::size_t span = total_steps > cfg.warmup_steps ? total_steps - cfg.warmup_steps : 1;
    const double progress =
        std::min(1.0, static_cast<double>(step - std::min(step, cfg.warmup_steps)) / static_cast<double>(span));
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<NamedTensor> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

double AdamW::global_grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) {
        for (double g : p.tensor.grad()) sq += g * g;
    }
    return std::sqrt(sq);
}

double AdamW::step(double lr) {
    ++t_;
    const double norm = global_grad_norm();
    const double clip = norm > cfg_.grad_clip ? cfg_.grad_clip / (norm + 1e-6) : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].tensor;
        auto w = t.mutable_data();
        auto g = t.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        const double decay = params_[i].decay ? cfg_.weight_decay : 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j] * clip;
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
            w[j] -= lr * (update + decay * w[j]);
        }
    }
    return norm;
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace dnd
