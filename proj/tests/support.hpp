#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <random>
#include <vector>

#include "dnd/model.hpp"
#include "dnd/tensor.hpp"
#include "dnd/transformer.hpp"

namespace dnd::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<std::int64_t> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::int64_t> dist(0, static_cast<std::int64_t>(vocab) - 1);
    std::vector<std::int64_t> out(n);
    for (auto& t : out) t = dist(rng);
    return out;
}

inline ModelConfig tiny_config(std::size_t n_layers = 4, std::size_t d_model = 16, std::size_t n_heads = 2,
                               std::size_t vocab = 32) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.d_head = d_model / n_heads;
    cfg.n_layers = n_layers;
    cfg.d_ff = 2 * d_model;
    cfg.max_seq_len = 64;
    return cfg;
}

// Router weights drawn large enough that some tokens land above tau.
inline void randomize_routers(TransformerModel& model, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& r : model.routers()) {
        for (auto& w : r.weight.mutable_data()) w = dist(rng);
        r.bias.mutable_data()[0] = dist(rng) * 0.1;
    }
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    return true;
}

}  // namespace dnd::test
