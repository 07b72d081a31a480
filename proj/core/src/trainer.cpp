#include "dnd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "dnd/ops.hpp"
#include "dnd/threshold_controller.hpp"

namespace dnd {

namespace {

constexpr std::uint64_t kDataStreamSalt = 0x9e3779b97f4a7c15ULL;

void moments(std::span<const double> xs, double& mean_out, double& std_out) {
    if (xs.empty()) {
        mean_out = std_out = 0.0;
        return;
    }
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - m) * (x - m);
    mean_out = m;
    std_out = std::sqrt(var / static_cast<double>(xs.size()));
}

std::string dump_records(const std::deque<TrainStepRecord>& records) {
    std::ostringstream out;
    for (const auto& r : records) write_record(out, r);
    return out.str();
}

}  // namespace

BatchLoss compute_batch_loss(const TransformerModel& model, const Batch& batch, const RouterLossWeights& weights,
                             const ForwardOptions& options) {
    BatchLoss out;
    out.forward = model.forward(batch.tokens, batch.batch, batch.seq_len, options);
    Tensor ce = cross_entropy(out.forward.logits, batch.targets);
    std::vector<Tensor> probs, logits;
    for (const auto& t : out.forward.traces) {
        probs.push_back(t.probs);
        logits.push_back(t.logits);
    }
    out.loss = combined_loss(ce, probs, weights, logits);
    return out;
}

Trainer::Trainer(DndConfig cfg)
    : Trainer(cfg, std::make_unique<TransformerModel>(cfg.model, cfg.dnd_settings(), cfg.seed)) {}

Trainer::Trainer(DndConfig cfg, std::unique_ptr<TransformerModel> model)
    : cfg_(std::move(cfg)),
      model_(std::move(model)),
      optimizer_(model_->parameters(), cfg_.optimizer),
      data_rng_(cfg_.seed ^ kDataStreamSalt) {
    cfg_.validate();
}

TrainStepRecord Trainer::train_step(const Batch& batch) {
    const auto started = std::chrono::steady_clock::now();
    ++step_;
    FlopTally tally;
    ForwardOptions options;
    options.flops = &tally;
    BatchLoss bl = compute_batch_loss(*model_, batch, cfg_.loss, options);

    TrainStepRecord rec;
    rec.step = step_;
    rec.total = bl.loss.total;
    rec.ce = bl.loss.ce;
    rec.l_sd = bl.loss.l_sd;
    rec.l_dp = bl.loss.l_dp;
    rec.l_router = bl.loss.l_router;
    rec.vanilla_flops = tally.vanilla_total();
    rec.nested_flops = tally.nested_total();
    if (!std::isfinite(rec.total)) {
        std::ostringstream what;
        what << "non-finite loss at step " << step_ << " (ce=" << rec.ce << ", l_sd=" << rec.l_sd
             << ", l_dp=" << rec.l_dp << ")";
        throw TrainingError(what.str(), dump_records(recent_));
    }

    optimizer_.zero_grad();
    bl.loss.total_tensor.backward();
    rec.lr = cosine_lr(cfg_.optimizer, step_, cfg_.steps);
    rec.grad_norm = optimizer_.step(rec.lr);
    for (auto& router : model_->routers()) {
        auto b = router.beta.mutable_data();
        b[0] = std::clamp(b[0], 0.0, 1.0);
    }

    for (const auto& trace : bl.forward.traces) {
        RouterState& router = model_->router_for_layer(trace.layer);
        LayerStepStats s;
        s.layer = trace.layer;
        s.tau_before = router.tau;
        const StepObservation obs = observe(trace.mask, cfg_.controller.k_target);
        if (!cfg_.controller.frozen) s.synced = controller_step(router, step_, obs, cfg_.controller).synced;
        s.tau = router.tau;
        s.tau_topk = obs.tau_topk;
        s.selected = obs.selected;
        s.tokens = obs.tokens;
        s.ratio = trace.mask.ratio();
        s.beta = router.beta.item();
        moments(trace.mask.probs, s.mean_p, s.std_p);
        if (cfg_.log_scores) s.scores = trace.mask.probs;
        rec.layers.push_back(std::move(s));
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    rec.tokens_per_sec = secs > 0.0 ? static_cast<double>(batch.batch * batch.seq_len) / secs : 0.0;
    recent_.push_back(rec);
    if (recent_.size() > 10) recent_.pop_front();
    return rec;
}

std::vector<TrainStepRecord> Trainer::train(const WindowedCorpus& corpus,
                                            const std::function<void(const TrainStepRecord&)>& on_record) {
    if (corpus.window_count() == 0) {
        throw ContractError("training corpus is empty or shorter than one window of " +
                            std::to_string(corpus.seq_len()) + " bytes");
    }
    std::vector<TrainStepRecord> records;
    records.reserve(cfg_.steps);
    while (step_ < cfg_.steps) {
        Batch batch = corpus.sample(cfg_.batch_size, data_rng_);
        records.push_back(train_step(batch));
        if (on_record) on_record(records.back());
    }
    return records;
}

EvalReport evaluate(const TransformerModel& model, const WindowedCorpus& corpus, std::size_t batch_size,
                    std::size_t max_windows, std::vector<std::vector<SelectionMask>>* mask_dump) {
    if (batch_size == 0) throw ContractError("evaluate: batch size must be positive");
    if (corpus.seq_len() > model.config().max_seq_len) {
        throw ContractError("evaluate: window length exceeds the model's max_seq_len");
    }
    for (auto t : corpus.tokens()) {
        if (t < 0 || static_cast<std::size_t>(t) >= model.config().vocab_size) {
            throw ContractError("evaluate: corpus token " + std::to_string(t) + " outside checkpoint vocabulary of " +
                                std::to_string(model.config().vocab_size));
        }
    }
    NoGradGuard no_grad;
    const std::size_t windows =
        max_windows == 0 ? corpus.window_count() : std::min(max_windows, corpus.window_count());
    EvalReport rep;
    rep.windows = windows;
    const std::size_t n_dnd = model.dnd().layer_count();
    rep.layer_selected.assign(n_dnd, 0);
    rep.layer_tokens.assign(n_dnd, 0);
    double ce_sum = 0.0;
    for (std::size_t start = 0; start < windows; start += batch_size) {
        std::vector<std::size_t> ids;
        for (std::size_t w = start; w < std::min(windows, start + batch_size); ++w) ids.push_back(w);
        Batch batch = corpus.make_batch(ids);
        ForwardResult fr = model.forward(batch.tokens, batch.batch, batch.seq_len);
        const std::size_t n = batch.target_count();
        ce_sum += cross_entropy(fr.logits, batch.targets).item() * static_cast<double>(n);
        rep.tokens += n;
        std::vector<SelectionMask> masks;
        for (std::size_t l = 0; l < fr.traces.size(); ++l) {
            rep.layer_selected[l] += fr.traces[l].mask.total_selected();
            rep.layer_tokens[l] += fr.traces[l].mask.total_tokens();
            if (mask_dump) masks.push_back(fr.traces[l].mask);
        }
        if (mask_dump) mask_dump->push_back(std::move(masks));
    }
    rep.ce = rep.tokens ? ce_sum / static_cast<double>(rep.tokens) : 0.0;
    rep.perplexity = std::exp(rep.ce);
    for (std::size_t l = 0; l < n_dnd; ++l) {
        rep.layers.push_back(model.dnd().l_start + l);
        rep.layer_ratios.push_back(rep.layer_tokens[l] ? static_cast<double>(rep.layer_selected[l]) /
                                                             static_cast<double>(rep.layer_tokens[l])
                                                       : 0.0);
    }
    return rep;
}

}  // namespace dnd
