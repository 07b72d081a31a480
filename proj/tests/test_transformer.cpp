#include <gtest/gtest.h>

#include "dnd/grad_check.hpp"
#include "dnd/model.hpp"
#include "support.hpp"

using namespace dnd;
using test::bit_equal;
using test::random_tensor;
using test::tiny_config;

namespace {

std::span<const double> row(const Tensor& t, std::size_t r, std::size_t d) { return t.data().subspan(r * d, d); }

}  // namespace

TEST(ModelConfig, Validation) {
    ModelConfig cfg = tiny_config();
    EXPECT_NO_THROW(cfg.validate());
    cfg.d_head = 3;
    EXPECT_THROW(cfg.validate(), std::exception);
    cfg = tiny_config();
    cfg.max_seq_len = 1;
    EXPECT_THROW(cfg.validate(), std::exception);
}

TEST(PositionAssignment, StrictlyIncreasing) {
    EXPECT_NO_THROW(PositionAssignment({0, 2, 5}));
    EXPECT_THROW(PositionAssignment({0, 2, 2}), ContractError);
    auto seq = PositionAssignment::sequential(4);
    EXPECT_EQ(seq.values()[3], 3);
}

TEST(DecoderLayer, ShapesAndInitScale) {
    ModelConfig cfg = tiny_config();
    std::mt19937_64 rng(1);
    auto layer = DecoderLayer::init(cfg, rng);
    EXPECT_NO_THROW(layer.check_shapes(cfg));
    EXPECT_EQ(layer.w_gate.dim(1), cfg.d_ff);
    EXPECT_EQ(layer.w_down.dim(0), cfg.d_ff);
    for (double v : layer.attn_norm.data()) EXPECT_EQ(v, 1.0);
}

TEST(LayerForward, PositionCountMismatchIsContractError) {
    ModelConfig cfg = tiny_config();
    std::mt19937_64 rng(2);
    auto layer = DecoderLayer::init(cfg, rng);
    auto x = random_tensor({1, 3, cfg.d_model}, rng);
    EXPECT_THROW(layer_forward(layer, cfg, x, PositionAssignment::sequential(4)), ContractError);
}

TEST(LayerForward, SingleTokenDependsOnlyOnItself) {
    ModelConfig cfg = tiny_config();
    std::mt19937_64 rng(3);
    auto layer = DecoderLayer::init(cfg, rng);
    auto x = random_tensor({1, 1, cfg.d_model}, rng, 1.0, false);
    auto a = layer_forward(layer, cfg, x, PositionAssignment::sequential(1));
    auto b = layer_forward(layer, cfg, x, PositionAssignment::sequential(1));
    EXPECT_TRUE(bit_equal(a.data(), b.data()));
    // A one-token window in a longer batch row gives the same output for that row.
    auto x2 = random_tensor({1, 3, cfg.d_model}, rng, 1.0, false);
    std::vector<double> v(x2.data().begin(), x2.data().end());
    std::copy(x.data().begin(), x.data().end(), v.begin());
    auto y2 = layer_forward(layer, cfg, Tensor::from({1, 3, cfg.d_model}, v), PositionAssignment::sequential(3));
    EXPECT_TRUE(bit_equal(row(y2, 0, cfg.d_model), a.data()));
}

TEST(LayerForward, FutureTokensDoNotAffectPast) {
    ModelConfig cfg = tiny_config();
    std::mt19937_64 rng(4);
    auto layer = DecoderLayer::init(cfg, rng);
    const std::size_t N = 6, d = cfg.d_model;
    auto x = random_tensor({1, N, d}, rng, 1.0, false);
    auto y = layer_forward(layer, cfg, x, PositionAssignment::sequential(N));
    for (std::size_t t = 0; t + 1 < N; ++t) {
        std::vector<double> v(x.data().begin(), x.data().end());
        // Permute rows t+1..N-1 and perturb them.
        std::reverse(v.begin() + (t + 1) * d, v.end());
        for (std::size_t i = (t + 1) * d; i < v.size(); ++i) v[i] += 0.5;
        auto y2 = layer_forward(layer, cfg, Tensor::from({1, N, d}, v), PositionAssignment::sequential(N));
        for (std::size_t s = 0; s <= t; ++s) EXPECT_TRUE(bit_equal(row(y, s, d), row(y2, s, d))) << t << " " << s;
    }
}

TEST(LayerForward, GradCheckTwoTokens) {
    ModelConfig cfg = tiny_config(2, 8, 2);
    std::mt19937_64 rng(5);
    auto layer = DecoderLayer::init(cfg, rng);
    for (auto& w : {layer.wq, layer.wk, layer.wv, layer.wo, layer.w_gate, layer.w_up, layer.w_down}) {
        Tensor t = w;
        for (auto& v : t.mutable_data()) v *= 10.0;
    }
    auto x = random_tensor({1, 2, 8}, rng);
    auto loss = [&] {
        return sum(square(layer_forward(layer, cfg, x, PositionAssignment::sequential(2))));
    };
    std::vector<Tensor> params = {x};
    for (auto& p : layer.parameters("l")) params.push_back(p.tensor);
    EXPECT_LT(grad_check_params(loss, params, 1e-6).max_rel_error, 1e-4);
}

TEST(LayerForward, FlopCountsMatchFormula) {
    ModelConfig cfg = tiny_config();
    std::mt19937_64 rng(6);
    auto layer = DecoderLayer::init(cfg, rng);
    const std::size_t B = 3, N = 5, d = cfg.d_model;
    FlopSink sink;
    layer_forward(layer, cfg, random_tensor({B, N, d}, rng), PositionAssignment::sequential(N), &sink);
    EXPECT_EQ(sink.attention, double(B) * 4.0 * d * N * N);
    EXPECT_EQ(sink.ffn, 6.0 * B * N * d * cfg.d_ff);
}

TEST(Model, DndDisabledMatchesPlainWeights) {
    ModelConfig cfg = tiny_config();
    DndSettings off;
    off.enabled = false;
    TransformerModel plain(cfg, off, 42);
    TransformerModel dnd(cfg, DndSettings::default_for(cfg.n_layers), 42);
    std::mt19937_64 rng(7);
    auto tokens = test::random_tokens(2 * 8, cfg.vocab_size, rng);
    auto a = plain.forward(tokens, 2, 8);
    auto b = dnd.forward(tokens, 2, 8);
    EXPECT_TRUE(a.traces.empty());
    EXPECT_EQ(b.traces.size(), 2u);
    // Zero-init routers at tau 0.5 select nothing.
    for (const auto& tr : b.traces) EXPECT_EQ(tr.mask.total_selected(), 0u);
    EXPECT_TRUE(bit_equal(a.logits.data(), b.logits.data()));
}

TEST(Model, TracesOnlyForConfiguredLayers) {
    ModelConfig cfg = tiny_config(4);
    DndSettings s;
    s.l_start = 1;
    s.l_end = 2;
    TransformerModel m(cfg, s, 1);
    std::mt19937_64 rng(8);
    auto tokens = test::random_tokens(8, cfg.vocab_size, rng);
    auto r = m.forward(tokens, 1, 8);
    ASSERT_EQ(r.traces.size(), 2u);
    EXPECT_EQ(r.traces[0].layer, 1u);
    EXPECT_EQ(r.traces[1].layer, 2u);
    EXPECT_EQ(r.logits.dim(2), cfg.vocab_size);
}

TEST(Model, TokenOutOfVocabularyIsIndexError) {
    ModelConfig cfg = tiny_config();
    TransformerModel m(cfg, DndSettings::default_for(4), 1);
    std::vector<std::int64_t> tokens = {1, 2, static_cast<std::int64_t>(cfg.vocab_size)};
    EXPECT_THROW(m.forward(tokens, 1, 3), IndexError);
}

TEST(Model, ParameterCountFormula) {
    for (std::size_t n_layers : {2u, 4u, 6u, 12u}) {
        ModelConfig cfg = tiny_config(n_layers, 16, 2);
        DndSettings off;
        off.enabled = false;
        DndSettings on = DndSettings::default_for(n_layers);
        TransformerModel plain(cfg, off, 3);
        TransformerModel dnd(cfg, on, 3);
        const std::size_t d = cfg.d_model, V = cfg.vocab_size, F = cfg.d_ff;
        const std::size_t per_layer = 2 * d + 4 * d * d + 3 * d * F;
        EXPECT_EQ(plain.parameter_count(), 2 * V * d + d + n_layers * per_layer);
        const std::size_t n_dnd = on.l_end - on.l_start + 1;
        EXPECT_EQ(dnd.parameter_count() - plain.parameter_count(), n_dnd * (d + 1) + n_dnd);
    }
}

TEST(DndSettings, DefaultRangeKeepsEnds) {
    auto s4 = DndSettings::default_for(4);
    EXPECT_EQ(s4.l_start, 1u);
    EXPECT_EQ(s4.l_end, 2u);
    auto s12 = DndSettings::default_for(12);
    EXPECT_EQ(s12.l_start, 2u);
    EXPECT_EQ(s12.l_end, 9u);
    auto s48 = DndSettings::default_for(48);
    EXPECT_EQ(s48.l_start, 8u);
    EXPECT_EQ(s48.l_end, 39u);
}
