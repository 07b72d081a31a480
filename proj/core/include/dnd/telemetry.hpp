#pragma once

#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <vector>

#include "dnd/config.hpp"

namespace dnd {

struct LayerStepStats {
    std::size_t layer = 0;
    double ratio = 0.0;
    double tau_before = 0.0;  // threshold used by this step's forward pass
    double tau = 0.0;  // after the controller update
    double tau_topk = 0.0;
    double beta = 0.0;
    double mean_p = 0.0;
    double std_p = 0.0;
    std::size_t selected = 0;
    std::size_t tokens = 0;
    bool synced = false;
    std::vector<double> scores;  // only when score logging is on
};

struct TrainStepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double total = 0.0;
    double ce = 0.0;
    double l_sd = 0.0;
    double l_dp = 0.0;
    double l_router = 0.0;
    double grad_norm = 0.0;
    double tokens_per_sec = 0.0;
    double vanilla_flops = 0.0;
    double nested_flops = 0.0;
    std::vector<LayerStepStats> layers;

    nlohmann::json to_json() const;
    static TrainStepRecord from_json(const nlohmann::json& j);
};

std::vector<TrainStepRecord> read_telemetry(const std::filesystem::path& path);
void write_record(std::ostream& out, const TrainStepRecord& record);

struct ReplayLayerResult {
    std::size_t layer = 0;
    std::size_t steps = 0;
    std::size_t tau_mismatches = 0;
    std::size_t selection_mismatches = 0;  // only checked when scores were logged
    std::vector<double> tau_trajectory;
};

// Re-runs every layer's threshold controller from the logged per-step
// statistics (or raw scores, when present) and compares with the logged tau.
std::vector<ReplayLayerResult> replay_telemetry(const std::vector<TrainStepRecord>& records, const DndConfig& cfg);

}  // namespace dnd
