#pragma once

#include <deque>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "dnd/config.hpp"
#include "dnd/corpus.hpp"
#include "dnd/model.hpp"
#include "dnd/optimizer.hpp"
#include "dnd/telemetry.hpp"

namespace dnd {

class TrainingError : public std::runtime_error {
  public:
    TrainingError(const std::string& what, std::string diagnostics)
        : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
    const std::string& diagnostics() const { return diagnostics_; }

  private:
    std::string diagnostics_;
};

struct BatchLoss {
    LossBreakdown loss;
    ForwardResult forward;
};

// Cross entropy plus router objectives for one batch.
BatchLoss compute_batch_loss(const TransformerModel& model, const Batch& batch, const RouterLossWeights& weights,
                             const ForwardOptions& options = {});

class Trainer {
  public:
    explicit Trainer(DndConfig cfg);
    // Resumes from an existing model (e.g. a loaded checkpoint).
    Trainer(DndConfig cfg, std::unique_ptr<TransformerModel> model);

    // One optimizer step plus threshold control; `step` is 1-based.
    TrainStepRecord train_step(const Batch& batch);

    // Runs cfg.steps steps over random windows. Each record is passed to
    // `on_record` (may be empty). Throws TrainingError on a non-finite loss.
    std::vector<TrainStepRecord> train(const WindowedCorpus& corpus,
                                       const std::function<void(const TrainStepRecord&)>& on_record = {});

    TransformerModel& model() { return *model_; }
    const TransformerModel& model() const { return *model_; }
    const DndConfig& config() const { return cfg_; }
    std::size_t steps_done() const { return step_; }

  private:
    DndConfig cfg_;
    std::unique_ptr<TransformerModel> model_;
    AdamW optimizer_;
    std::mt19937_64 data_rng_;
    std::size_t step_ = 0;
    std::deque<TrainStepRecord> recent_;
};

struct EvalReport {
    double ce = 0.0;
    double perplexity = 0.0;
    std::size_t tokens = 0;  // scored targets
    std::size_t windows = 0;
    std::vector<std::size_t> layers;
    std::vector<double> layer_ratios;
    std::vector<std::size_t> layer_selected;
    std::vector<std::size_t> layer_tokens;
};

// Frozen-threshold evaluation over the first `max_windows` windows (0: all).
// `mask_dump`, if given, receives every batch's selection masks per layer.
EvalReport evaluate(const TransformerModel& model, const WindowedCorpus& corpus, std::size_t batch_size,
                    std::size_t max_windows = 0, std::vector<std::vector<SelectionMask>>* mask_dump = nullptr);

}  // namespace dnd
