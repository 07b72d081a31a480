#include "dnd/threshold_controller.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <vector>

namespace dnd {

void ControllerConfig::validate() const {
    if (!(k_target > 0.0 && k_target < 1.0)) throw ContractError("controller: k_target must lie in (0, 1)");
    if (!(alpha > 0.0)) throw ContractError("controller: alpha must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("controller: gamma must lie in [0, 1]");
    if (buffer_capacity < 1) throw ContractError("controller: buffer_capacity must be at least 1");
    if (sync_period < 1) throw ContractError("controller: sync_period must be at least 1");
}

double clamp_tau(double tau) { return std::clamp(tau, kTauMargin, 1.0 - kTauMargin); }

double compute_error(std::size_t selected, std::size_t tokens, double k_target) {
    if (tokens == 0) throw ContractError("compute_error: empty batch");
    return static_cast<double>(selected) / static_cast<double>(tokens) - k_target;
}

double compute_error(std::span<const SelectionMask> masks, double k_target) {
    std::size_t selected = 0, tokens = 0;
    for (const auto& m : masks) {
        selected += m.total_selected();
        tokens += m.total_tokens();
    }
    return compute_error(selected, tokens, k_target);
}

double proportional_update(RouterState& state, double error, double alpha) {
    state.tau = clamp_tau(state.tau + alpha * error);
    return state.tau;
}

double ideal_topk_threshold(std::span<const double> probs, double k_target) {
    if (probs.empty()) throw ContractError("ideal_topk_threshold: no scores");
    const std::size_t total = probs.size();
    const auto s = static_cast<std::size_t>(std::floor(k_target * static_cast<double>(total)));
    std::vector<double> scores(probs.begin(), probs.end());
    if (s == 0) return *std::max_element(scores.begin(), scores.end());
    const std::size_t rank = std::min(s, total - 1);
    std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(rank), scores.end(),
                     std::greater<>());
    return scores[rank];
}

bool ema_sync(RouterState& state, double gamma) {
    if (state.topk_tau_buffer.empty()) {
        std::cerr << "warning: threshold sync skipped, no ideal-threshold samples buffered\n";
        return false;
    }
    state.tau = clamp_tau((1.0 - gamma) * state.tau + gamma * state.topk_tau_buffer.mean());
    return true;
}

StepObservation observe(const SelectionMask& mask, double k_target) {
    StepObservation obs;
    obs.selected = mask.total_selected();
    obs.tokens = mask.total_tokens();
    obs.tau_topk = ideal_topk_threshold(mask.probs, k_target);
    return obs;
}

ControllerStepResult controller_step(RouterState& state, std::size_t step_index, const StepObservation& obs,
                                     const ControllerConfig& cfg) {
    ControllerStepResult r;
    r.tau_before = state.tau;
    r.error = compute_error(obs.selected, obs.tokens, cfg.k_target);
    state.ratio_buffer.push(static_cast<double>(obs.selected) / static_cast<double>(obs.tokens));
    state.topk_tau_buffer.push(obs.tau_topk);
    proportional_update(state, r.error, cfg.alpha);
    if (cfg.ema_enabled && step_index % cfg.sync_period == 0) r.synced = ema_sync(state, cfg.gamma);
    r.tau_after = state.tau;
    return r;
}

ControllerStepResult controller_step(RouterState& state, std::size_t step_index, const SelectionMask& mask,
                                     const ControllerConfig& cfg) {
    return controller_step(state, step_index, observe(mask, cfg.k_target), cfg);
}

}  // namespace dnd
