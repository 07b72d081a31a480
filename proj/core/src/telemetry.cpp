#include "dnd/telemetry.hpp"

#include <fstream>
#include <map>
#include <ostream>

namespace dnd {

using nlohmann::json;

nlohmann::json TrainStepRecord::to_json() const {
    json layers_json = json::array();
    for (const auto& l : layers) {
        json lj = {{"layer", l.layer},       {"ratio", l.ratio},       {"tau_before", l.tau_before},
                   {"tau", l.tau},           {"tau_topk", l.tau_topk}, {"beta", l.beta},
                   {"mean_p", l.mean_p},     {"std_p", l.std_p},       {"selected", l.selected},
                   {"tokens", l.tokens},     {"synced", l.synced}};
        if (!l.scores.empty()) lj["scores"] = l.scores;
        layers_json.push_back(std::move(lj));
    }
    return {{"step", step},
            {"lr", lr},
            {"total", total},
            {"ce", ce},
            {"l_sd", l_sd},
            {"l_dp", l_dp},
            {"l_router", l_router},
            {"grad_norm", grad_norm},
            {"tokens_per_sec", tokens_per_sec},
            {"vanilla_flops", vanilla_flops},
            {"nested_flops", nested_flops},
            {"layers", std::move(layers_json)}};
}

TrainStepRecord TrainStepRecord::from_json(const nlohmann::json& j) {
    TrainStepRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.lr = j.value("lr", 0.0);
    r.total = j.at("total").get<double>();
    r.ce = j.at("ce").get<double>();
    r.l_sd = j.at("l_sd").get<double>();
    r.l_dp = j.at("l_dp").get<double>();
    r.l_router = j.at("l_router").get<double>();
    r.grad_norm = j.value("grad_norm", 0.0);
    r.tokens_per_sec = j.value("tokens_per_sec", 0.0);
    r.vanilla_flops = j.value("vanilla_flops", 0.0);
    r.nested_flops = j.value("nested_flops", 0.0);
    for (const auto& lj : j.at("layers")) {
        LayerStepStats l;
        l.layer = lj.at("layer").get<std::size_t>();
        l.ratio = lj.at("ratio").get<double>();
        l.tau_before = lj.at("tau_before").get<double>();
        l.tau = lj.at("tau").get<double>();
        l.tau_topk = lj.at("tau_topk").get<double>();
        l.beta = lj.at("beta").get<double>();
        l.mean_p = lj.at("mean_p").get<double>();
        l.std_p = lj.at("std_p").get<double>();
        l.selected = lj.at("selected").get<std::size_t>();
        l.tokens = lj.at("tokens").get<std::size_t>();
        l.synced = lj.value("synced", false);
        if (lj.contains("scores")) l.scores = lj.at("scores").get<std::vector<double>>();
        r.layers.push_back(std::move(l));
    }
    return r;
}

void write_record(std::ostream& out, const TrainStepRecord& record) { out << record.to_json().dump() << '\n'; }

std::vector<TrainStepRecord> read_telemetry(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read telemetry file " + path.string());
    std::vector<TrainStepRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(TrainStepRecord::from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<ReplayLayerResult> replay_telemetry(const std::vector<TrainStepRecord>& records, const DndConfig& cfg) {
    std::map<std::size_t, RouterState> states;
    std::map<std::size_t, ReplayLayerResult> results;
    std::size_t previous_step = 0;
    for (const auto& rec : records) {
        if (rec.step <= previous_step) throw ContractError("telemetry steps are not strictly increasing");
        previous_step = rec.step;
        for (const auto& l : rec.layers) {
            auto [it, fresh] = states.try_emplace(l.layer);
            RouterState& state = it->second;
            if (fresh) {
                state.tau = cfg.tau_init;
                state.ratio_buffer = RingBuffer<double>(cfg.controller.buffer_capacity);
                state.topk_tau_buffer = RingBuffer<double>(cfg.controller.buffer_capacity);
            }
            auto& res = results[l.layer];
            res.layer = l.layer;
            ++res.steps;

            StepObservation obs{l.selected, l.tokens, l.tau_topk};
            if (!l.scores.empty()) {
                std::size_t selected = 0;
                for (double p : l.scores) selected += p > state.tau ? 1 : 0;
                if (selected != l.selected) ++res.selection_mismatches;
                obs = {selected, l.scores.size(), ideal_topk_threshold(l.scores, cfg.controller.k_target)};
            }
            if (!cfg.controller.frozen) controller_step(state, rec.step, obs, cfg.controller);
            if (state.tau != l.tau) ++res.tau_mismatches;
            res.tau_trajectory.push_back(state.tau);
        }
    }
    std::vector<ReplayLayerResult> out;
    for (auto& [_, r] : results) out.push_back(std::move(r));
    return out;
}

}  // namespace dnd
