#pragma once

#include <string>
#include <vector>

#include "dnd/model.hpp"

namespace dnd {

struct HeatmapCell {
    std::size_t token_index = 0;
    std::string token;
    std::size_t layer = 0;
    double p = 0.0;
    bool selected = false;
};

struct HeatmapExport {
    std::vector<std::string> tokens;
    std::vector<std::size_t> layers;
    // Row-major [tokens, layers].
    std::vector<HeatmapCell> cells;

    const HeatmapCell& at(std::size_t token, std::size_t layer_slot) const {
        return cells.at(token * layers.size() + layer_slot);
    }
};

// One forward pass (chunked at max_seq_len) with the model's current thresholds.
HeatmapExport build_heatmap(const TransformerModel& model, std::string_view text);

// Columns: token_index,token,layer,p,selected
std::string heatmap_csv(const HeatmapExport& h);
// Self-contained page; shallow-layer selections render light, deep ones dark.
std::string heatmap_html(const HeatmapExport& h);

}  // namespace dnd
