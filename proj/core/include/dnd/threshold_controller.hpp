#pragma once

// Loss-free regulation of the routing threshold tau. Every step a
// proportional law moves tau against the selection-ratio error; every
// `sync_period` steps tau is additionally blended toward the average
// threshold that would have hit the target ratio exactly on recent steps.

#include <cstddef>
#include <span>

#include "dnd/dnd_layer.hpp"

namespace dnd {

inline constexpr double kTauMargin = 1e-4;

struct ControllerConfig {
    double k_target = 0.2;
    double alpha = 5e-3;
    double gamma = 0.2;
    std::size_t buffer_capacity = 5;
    std::size_t sync_period = 50;
    bool ema_enabled = true;
    bool frozen = false;

    void validate() const;
};

// Sufficient statistics of one step for one layer. Replay needs nothing else.
struct StepObservation {
    std::size_t selected = 0;
    std::size_t tokens = 0;
    double tau_topk = 0.0;
};

struct ControllerStepResult {
    double error = 0.0;
    double tau_before = 0.0;
    double tau_after = 0.0;
    bool synced = false;
};

double clamp_tau(double tau);

// Token-pooled realized ratio minus the target.
double compute_error(std::span<const SelectionMask> masks, double k_target);
double compute_error(std::size_t selected, std::size_t tokens, double k_target);

// tau += alpha * e, clamped to (kTauMargin, 1 - kTauMargin).
double proportional_update(RouterState& state, double error, double alpha);

// The (s+1)-th largest score with s = floor(k_target * T); the maximum when
// s = 0. Strict comparison against it selects exactly the s largest scores
// when there are no ties at the boundary.
double ideal_topk_threshold(std::span<const double> probs, double k_target);

// tau = (1 - gamma) * tau + gamma * mean(topk buffer). Returns false (and
// leaves tau untouched) when the buffer is empty.
bool ema_sync(RouterState& state, double gamma);

StepObservation observe(const SelectionMask& mask, double k_target);

// Buffers the observation, applies the proportional law, then EMA sync on
// steps where step_index % sync_period == 0.
ControllerStepResult controller_step(RouterState& state, std::size_t step_index, const StepObservation& obs,
                                     const ControllerConfig& cfg);
ControllerStepResult controller_step(RouterState& state, std::size_t step_index, const SelectionMask& mask,
                                     const ControllerConfig& cfg);

}  // namespace dnd
