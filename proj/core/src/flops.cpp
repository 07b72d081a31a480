#include "dnd/flops.hpp"

#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dnd/tensor.hpp"

namespace dnd {

void FlopsParams::validate() const {
    for (double v : {seq_len, hidden, n_heads, head_dim, total_layers, dnd_layers, moe_inner}) {
        if (!(v > 0.0)) throw ContractError("flops: all sizes must be positive");
    }
    if (active_experts < 0.0) throw ContractError("flops: active expert count must be non-negative");
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ContractError("flops: recalculation ratio must lie in (0, 1]");
    if (dnd_layers > total_layers) throw ContractError("flops: more DND layers than total layers");
}

double flops_attention(const FlopsParams& p) { return 4.0 * p.n_heads * p.head_dim * p.seq_len * p.seq_len; }

double flops_moe(const FlopsParams& p) { return 6.0 * p.seq_len * p.active_experts * p.hidden * p.moe_inner; }

FlopsReport overhead_report(const FlopsParams& p) {
    p.validate();
    FlopsReport r;
    r.attn_flops = flops_attention(p);
    r.moe_flops = flops_moe(p);
    r.layer_flops = r.attn_flops + r.moe_flops;
    r.added_flops = p.ratio * p.ratio * r.attn_flops + p.ratio * r.moe_flops;
    r.per_layer_overhead = 100.0 * r.added_flops / r.layer_flops;
    r.total_overhead = r.per_layer_overhead * p.dnd_layers / p.total_layers;
    return r;
}

std::string format_report_table(const FlopsParams& p, const FlopsReport& r) {
    char buf[1024];
    std::snprintf(buf, sizeof(buf),
                  "parameters: S=%.0f H=%.0f N_h=%.0f d_h=%.0f L_total=%.0f L_dnd=%.0f I_moe=%.0f k=%.0f r=%.4g\n"
                  "  attention FLOPs / layer   %14.6e\n"
                  "  MLP FLOPs / layer         %14.6e\n"
                  "  layer FLOPs               %14.6e\n"
                  "  nested-pass added FLOPs   %14.6e\n"
                  "  per-layer overhead        %13.4f%%\n"
                  "  total overhead            %13.4f%%\n",
                  p.seq_len, p.hidden, p.n_heads, p.head_dim, p.total_layers, p.dnd_layers, p.moe_inner,
                  p.active_experts, p.ratio, r.attn_flops, r.moe_flops, r.layer_flops, r.added_flops,
                  r.per_layer_overhead, r.total_overhead);
    return buf;
}

std::string format_report_json(const FlopsParams& p, const FlopsReport& r) {
    nlohmann::json j;
    j["params"] = {{"S", p.seq_len},          {"H", p.hidden},
                   {"N_h", p.n_heads},        {"d_h", p.head_dim},
                   {"L_total", p.total_layers}, {"L_dnd", p.dnd_layers},
                   {"I_moe", p.moe_inner},    {"k", p.active_experts},
                   {"r", p.ratio}};
    j["attn_flops"] = r.attn_flops;
    j["moe_flops"] = r.moe_flops;
    j["layer_flops"] = r.layer_flops;
    j["added_flops"] = r.added_flops;
    j["per_layer_overhead_pct"] = r.per_layer_overhead;
    j["total_overhead_pct"] = r.total_overhead;
    return j.dump();
}

}  // namespace dnd
