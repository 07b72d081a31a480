#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dnd/checkpoint.hpp"
#include "dnd/config.hpp"
#include "dnd/corpus.hpp"
#include "dnd/flops.hpp"
#include "dnd/heatmap.hpp"
#include "dnd/telemetry.hpp"
#include "dnd/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw dnd::IoError("cannot write " + path.string());
    out << contents;
}

std::string read_text_arg(const std::string& arg) {
    std::error_code ec;
    if (fs::is_regular_file(arg, ec)) {
        std::ifstream in(arg, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
    return arg;
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& data,
              const std::string& out_dir, std::size_t steps, std::size_t log_every) {
    dnd::DndConfig cfg = config_path.empty() ? dnd::DndConfig{} : dnd::load_config(config_path);
    for (const auto& o : overrides) dnd::apply_override(cfg, o);
    if (!data.empty()) cfg.data_path = data;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (steps) cfg.steps = steps;
    cfg.validate();
    if (cfg.data_path.empty()) throw dnd::ContractError("no training data: set train.data or pass --data");

    auto tokens = dnd::ingest(cfg.data_path);
    if (tokens.empty()) throw dnd::ContractError("training corpus " + cfg.data_path + " is empty");
    dnd::WindowedCorpus corpus(std::move(tokens), cfg.seq_len);

    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    write_file(out / "config.json", cfg.to_json().dump(2) + "\n");
    std::ofstream telemetry(out / "telemetry.jsonl");
    if (!telemetry) throw dnd::IoError("cannot write " + (out / "telemetry.jsonl").string());

    dnd::Trainer trainer(cfg);
    std::cout << "training " << trainer.model().parameter_count() << " parameters on " << corpus.window_count()
              << " windows for " << cfg.steps << " steps\n";
    const auto t0 = std::chrono::steady_clock::now();
    try {
        trainer.train(corpus, [&](const dnd::TrainStepRecord& r) {
            dnd::write_record(telemetry, r);
            if (cfg.checkpoint_every && r.step % cfg.checkpoint_every == 0 && r.step != cfg.steps) {
                dnd::save_checkpoint(out / ("checkpoint_" + std::to_string(r.step) + ".bin"), trainer.model(), cfg,
                                     r.step);
            }
            if (log_every && (r.step % log_every == 0 || r.step == 1 || r.step == cfg.steps)) {
                std::printf("step %6zu  lr %.2e  loss %.4f  ce %.4f  |g| %.3f", r.step, r.lr, r.total, r.ce,
                            r.grad_norm);
                for (const auto& l : r.layers) std::printf("  L%zu r=%.3f tau=%.3f", l.layer, l.ratio, l.tau);
                std::printf("  %.0f tok/s\n", r.tokens_per_sec);
                std::fflush(stdout);
            }
        });
    } catch (const dnd::TrainingError& e) {
        telemetry.flush();
        std::cerr << "error: " << e.what() << "\nlast records:\n" << e.diagnostics();
        write_file(out / "nan_dump.jsonl", e.diagnostics());
        return 2;
    }
    dnd::save_checkpoint(out / "checkpoint.bin", trainer.model(), cfg, trainer.steps_done());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("done in %.1f s; checkpoint %s\n", secs, (out / "checkpoint.bin").c_str());
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data, std::size_t batch, std::size_t max_windows,
             bool as_json) {
    auto ck = dnd::load_checkpoint(ckpt_path);
    dnd::WindowedCorpus corpus(dnd::ingest(data), ck.config.seq_len);
    const auto rep = dnd::evaluate(*ck.model, corpus, batch ? batch : ck.config.batch_size, max_windows);
    nlohmann::json j = {{"ce", rep.ce},           {"perplexity", rep.perplexity}, {"tokens", rep.tokens},
                        {"windows", rep.windows}, {"layers", rep.layers},         {"layer_ratios", rep.layer_ratios}};
    if (as_json) {
        std::cout << j.dump() << "\n";
        return 0;
    }
    std::printf("ce          %.6f\nperplexity  %.4f\ntokens      %zu\nwindows     %zu\n", rep.ce, rep.perplexity,
                rep.tokens, rep.windows);
    for (std::size_t i = 0; i < rep.layers.size(); ++i)
        std::printf("layer %-4zu  ratio %.4f\n", rep.layers[i], rep.layer_ratios[i]);
    return 0;
}

int run_heatmap(const std::string& ckpt_path, const std::string& text_arg, const std::string& prefix) {
    auto ck = dnd::load_checkpoint(ckpt_path);
    const auto h = dnd::build_heatmap(*ck.model, read_text_arg(text_arg));
    write_file(prefix + ".csv", dnd::heatmap_csv(h));
    write_file(prefix + ".html", dnd::heatmap_html(h));
    std::printf("%zu tokens x %zu layers -> %s.csv, %s.html\n", h.tokens.size(), h.layers.size(), prefix.c_str(),
                prefix.c_str());
    return 0;
}

int run_replay(const std::string& telemetry_path, const std::string& config_path) {
    fs::path cfg_path = config_path;
    if (cfg_path.empty()) cfg_path = fs::path(telemetry_path).parent_path() / "config.json";
    dnd::DndConfig cfg;
    if (cfg_path.extension() == ".json") {
        std::ifstream in(cfg_path);
        if (!in) throw dnd::IoError("cannot read " + cfg_path.string());
        cfg = dnd::DndConfig::from_json(nlohmann::json::parse(in));
    } else {
        cfg = dnd::load_config(cfg_path);
    }
    const auto records = dnd::read_telemetry(telemetry_path);
    const auto results = dnd::replay_telemetry(records, cfg);
    std::size_t bad = 0;
    for (const auto& r : results) {
        std::printf("layer %-4zu steps %-6zu tau mismatches %-4zu selection mismatches %-4zu final tau %.6f\n", r.layer,
                    r.steps, r.tau_mismatches, r.selection_mismatches,
                    r.tau_trajectory.empty() ? 0.0 : r.tau_trajectory.back());
        bad += r.tau_mismatches + r.selection_mismatches;
    }
    std::printf(bad ? "replay: MISMATCH\n" : "replay: ok\n");
    return bad ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic nested depth toy transformer"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "Train a model and write telemetry and checkpoints");
    std::string train_config, train_data, train_out;
    std::vector<std::string> overrides;
    std::size_t train_steps = 0, log_every = 100;
    train->add_option("--config", train_config, "Key/value config file")->check(CLI::ExistingFile);
    train->add_option("--set", overrides, "Override, e.g. --set controller.k_target=0.25")->take_all();
    train->add_option("--data", train_data, "Training text file");
    train->add_option("--out", train_out, "Output directory");
    train->add_option("--steps", train_steps, "Number of optimizer steps");
    train->add_option("--log-every", log_every, "Progress line interval (0: quiet)");
    train->allow_extras();

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with frozen thresholds");
    std::string eval_ckpt, eval_data;
    std::size_t eval_batch = 0, eval_windows = 0;
    bool eval_json = false;
    eval->add_option("--ckpt", eval_ckpt)->required()->check(CLI::ExistingFile);
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--batch", eval_batch, "Windows per batch (default: training batch size)");
    eval->add_option("--max-windows", eval_windows, "Evaluate only the first N windows");
    eval->add_flag("--json", eval_json);

    auto* flops = app.add_subcommand("flops", "Analytical overhead of nested recomputation");
    std::string flops_config;
    std::vector<std::string> flops_sets;
    bool flops_json_only = false;
    dnd::FlopsParams fp;
    flops->add_option("--config", flops_config, "File with flops.* keys")->check(CLI::ExistingFile);
    flops->add_option("--S", fp.seq_len);
    flops->add_option("--H", fp.hidden);
    flops->add_option("--N_h", fp.n_heads);
    flops->add_option("--d_h", fp.head_dim);
    flops->add_option("--L_total", fp.total_layers);
    flops->add_option("--L_dnd", fp.dnd_layers);
    flops->add_option("--I_moe", fp.moe_inner);
    flops->add_option("--k", fp.active_experts);
    flops->add_option("--r", fp.ratio);
    flops->add_flag("--json", flops_json_only, "Print only the JSON report");

    auto* heatmap = app.add_subcommand("heatmap", "Per-token selection export (CSV and HTML)");
    std::string hm_ckpt, hm_text, hm_out = "heatmap";
    heatmap->add_option("--ckpt", hm_ckpt)->required()->check(CLI::ExistingFile);
    heatmap->add_option("--text", hm_text, "Text or path to a text file")->required();
    heatmap->add_option("--out", hm_out, "Output prefix");

    auto* replay = app.add_subcommand("replay", "Recompute threshold trajectories from telemetry");
    std::string rp_telemetry, rp_config;
    replay->add_option("--telemetry", rp_telemetry)->required()->check(CLI::ExistingFile);
    replay->add_option("--config", rp_config, "Config (default: config.json next to the telemetry)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            // Bare key=value arguments count as overrides too.
            for (const auto& extra : train->remaining()) overrides.push_back(extra);
            return run_train(train_config, overrides, train_data, train_out, train_steps, log_every);
        }
        if (*eval) return run_eval(eval_ckpt, eval_data, eval_batch, eval_windows, eval_json);
        if (*flops) {
            dnd::FlopsParams params = flops_config.empty() ? dnd::FlopsParams{} : dnd::load_flops_params(flops_config);
            // Flags given on the command line win over the file.
            const std::pair<const char*, double*> flags[] = {
                {"--S", &fp.seq_len},       {"--H", &fp.hidden},         {"--N_h", &fp.n_heads},
                {"--d_h", &fp.head_dim},    {"--L_total", &fp.total_layers}, {"--L_dnd", &fp.dnd_layers},
                {"--I_moe", &fp.moe_inner}, {"--k", &fp.active_experts}, {"--r", &fp.ratio}};
            for (const auto& [name, value] : flags)
                if (flops->count(name)) apply_flops_override(params, std::string(name).substr(2), *value);
            params.validate();
            const auto rep = dnd::overhead_report(params);
            if (!flops_json_only) std::cout << dnd::format_report_table(params, rep) << "\n";
            std::cout << dnd::format_report_json(params, rep) << "\n";
            return 0;
        }
        if (*heatmap) return run_heatmap(hm_ckpt, hm_text, hm_out);
        if (*replay) return run_replay(rp_telemetry, rp_config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
