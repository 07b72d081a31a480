#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "dnd/flops.hpp"
#include "dnd/model.hpp"
#include "dnd/router_objectives.hpp"
#include "dnd/threshold_controller.hpp"
#include "dnd/transformer.hpp"

namespace dnd {

struct OptimizerConfig {
    double lr_max = 3e-4;
    double lr_min = 6e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    std::size_t warmup_steps = 0;
};

struct DndConfig {
    ModelConfig model;
    bool dnd_enabled = true;
    // -1 selects the default range for the model depth.
    std::int64_t l_start = -1;
    std::int64_t l_end = -1;
    double beta_init = 0.1;
    double tau_init = 0.5;
    ControllerConfig controller;
    RouterLossWeights loss;
    OptimizerConfig optimizer;

    std::uint64_t seed = 1234;
    std::size_t batch_size = 8;
    std::size_t seq_len = 64;
    std::size_t steps = 3000;

    std::string data_path;
    std::string out_dir = "runs/dnd";
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
    bool log_scores = false;  // write raw router scores into telemetry

    DndSettings dnd_settings() const;
    void validate() const;

    // Flat "section.key" view used by files, overrides and checkpoints.
    nlohmann::json to_json() const;
    static DndConfig from_json(const nlohmann::json& flat);
};

// Applies one "section.key" assignment; the value is parsed as JSON when it
// parses, otherwise taken as a string.
void apply_override(DndConfig& cfg, const std::string& key, const std::string& value);
// "section.key=value"
void apply_override(DndConfig& cfg, const std::string& assignment);

// TOML-style file: [section] headers, key = value lines, # comments.
std::map<std::string, std::string> parse_key_value_file(const std::filesystem::path& path);
DndConfig load_config(const std::filesystem::path& path);

// Reads FlopsParams keys (flops.S, flops.H, ...) from a key/value file.
FlopsParams load_flops_params(const std::filesystem::path& path);
void apply_flops_override(FlopsParams& p, const std::string& key, double value);

std::vector<std::string> config_keys();

}  // namespace dnd
