#include <benchmark/benchmark.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dnd/dnd_layer.hpp"
#include "dnd/flops.hpp"
#include "dnd/model.hpp"
#include "dnd/ops.hpp"
#include "dnd/threshold_controller.hpp"

using namespace dnd;

namespace {

Tensor random(Shape shape, std::mt19937_64& rng, bool grad = false) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.vocab_size = 258;
    cfg.d_model = 128;
    cfg.n_heads = 4;
    cfg.d_head = 32;
    cfg.n_layers = 4;
    cfg.d_ff = 352;
    cfg.max_seq_len = 256;
    return cfg;
}

// Random router whose bias puts the (1 - ratio) logit quantile at zero, so
// about `ratio` of the tokens in `x` clear tau = 0.5.
RouterState router_for_ratio(const Tensor& x, std::size_t d, double ratio, std::mt19937_64& rng) {
    auto r = RouterState::zero_init(d, 0.5, 0.5, 5);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& w : r.weight.mutable_data()) w = dist(rng);
    auto z = router_logits(r, x);
    std::vector<double> v(z.data().begin(), z.data().end());
    std::sort(v.begin(), v.end());
    const auto i = static_cast<std::size_t>((1.0 - ratio) * static_cast<double>(v.size() - 1));
    r.bias.mutable_data()[0] = ratio <= 0.0 ? -(v.back() + 1.0) : -v[i];
    return r;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    auto a = random({n, n}, rng), b = random({n, n}, rng);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_LayerForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto cfg = toy_config();
    std::mt19937_64 rng(2);
    auto layer = DecoderLayer::init(cfg, rng);
    auto x = random({8, n, cfg.d_model}, rng);
    const auto pos = PositionAssignment::sequential(n);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(layer_forward(layer, cfg, x, pos));
    state.SetItemsProcessed(state.iterations() * 8 * n);
}
BENCHMARK(BM_LayerForward)->Arg(64)->Arg(128);

// Full DND layer at several selection ratios; ratio 0 is the plain-pass floor.
static void BM_DndLayerForward(benchmark::State& state) {
    const double ratio = state.range(0) / 100.0;
    auto cfg = toy_config();
    std::mt19937_64 rng(3);
    auto layer = DecoderLayer::init(cfg, rng);
    auto x = random({8, 64, cfg.d_model}, rng);
    auto router = router_for_ratio(x, cfg.d_model, ratio, rng);
    const auto pos = PositionAssignment::sequential(64);
    NoGradGuard guard;
    double realized = 0.0;
    for (auto _ : state) {
        auto out = dnd_layer_forward(layer, cfg, router, x, pos);
        realized = out.mask.ratio();
        benchmark::DoNotOptimize(out.output);
    }
    state.counters["ratio"] = realized;
}
BENCHMARK(BM_DndLayerForward)->Arg(0)->Arg(20)->Arg(50);

static void BM_TrainStepForwardBackward(benchmark::State& state) {
    auto cfg = toy_config();
    TransformerModel model(cfg, DndSettings::default_for(cfg.n_layers), 4);
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::int64_t> tok(0, 255);
    std::vector<std::int64_t> tokens(8 * 64);
    for (auto& t : tokens) t = tok(rng);
    std::vector<std::int64_t> targets(tokens.begin() + 1, tokens.end());
    targets.push_back(-1);
    for (auto _ : state) {
        auto fr = model.forward(tokens, 8, 64);
        auto loss = cross_entropy(fr.logits.reshape({8 * 64, cfg.vocab_size}), targets);
        loss.backward();
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_TrainStepForwardBackward)->Unit(benchmark::kMillisecond);

static void BM_ControllerStep(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(n);
    for (auto& x : p) x = u(rng);
    ControllerConfig cfg;
    cfg.sync_period = 1;
    auto s = RouterState::zero_init(1, 0.1, 0.5, cfg.buffer_capacity);
    auto probs = Tensor::from({1, n}, p);
    std::size_t step = 0;
    for (auto _ : state) {
        auto mask = build_mask(probs, s.tau);
        benchmark::DoNotOptimize(controller_step(s, ++step, mask, cfg));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ControllerStep)->Arg(512)->Arg(4096);

static void BM_FlopsReport(benchmark::State& state) {
    FlopsParams p;
    for (auto _ : state) benchmark::DoNotOptimize(overhead_report(p));
}
BENCHMARK(BM_FlopsReport);
BENCHMARK_MAIN();
