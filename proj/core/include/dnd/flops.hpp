#pragma once

#include <string>

namespace dnd {

// Analytical per-layer cost of nested recomputation. Attention is quadratic
// in sequence length, the expert MLP linear, so recomputing a fraction r of
// tokens costs r^2 of the former and r of the latter.
struct FlopsParams {
    double seq_len = 16384;  // S
    double hidden = 2048;  // H
    double n_heads = 32;  // N_h
    double head_dim = 128;  // d_h
    double total_layers = 48;  // L_total
    double dnd_layers = 40;  // L_dnd
    double moe_inner = 768;  // I_moe
    double active_experts = 8;  // k
    double ratio = 0.2;  // r

    void validate() const;
};

struct FlopsReport {
    double attn_flops = 0.0;
    double moe_flops = 0.0;
    double layer_flops = 0.0;
    double added_flops = 0.0;
    double per_layer_overhead = 0.0;  // percent
    double total_overhead = 0.0;  // percent
};

// 4 * N_h * d_h * S^2
double flops_attention(const FlopsParams& p);
// 6 * S * k * H * I_moe
double flops_moe(const FlopsParams& p);
FlopsReport overhead_report(const FlopsParams& p);

std::string format_report_table(const FlopsParams& p, const FlopsReport& r);
std::string format_report_json(const FlopsParams& p, const FlopsReport& r);

}  // namespace dnd
