#include "dnd/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dnd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using StridedConst = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

std::size_t last_dim(const Tensor& t) {
    if (t.rank() == 0) throw DimensionError("rank-0 tensor has no last dimension");
    return t.shape().back();
}

std::size_t row_count(const Tensor& t) {
    auto d = last_dim(t);
    return d == 0 ? 0 : t.numel() / d;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
}

bool wants(const detail::Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

std::vector<double>& pgrad(detail::Node& self, std::size_t i) { return self.parents[i]->ensure_grad(); }

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
    const auto in = a.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return Tensor::make_result(a.shape(), std::move(out), {a}, [deriv](detail::Node& self) {
        auto& g = pgrad(self, 0);
        const auto& x = self.parents[0]->data;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(x[i], self.data[i]);
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (b.rank() != 2 || a.rank() < 1 || last_dim(a) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
    }
    const std::size_t k = b.dim(0), n = b.dim(1), m = row_count(a);
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<double> out(m * n, 0.0);
    if (m && n && k) {
        MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    }
    return Tensor::make_result(std::move(out_shape), std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        if (!m || !n || !k) return;
        ConstMap dc(self.grad.data(), m, n);
        if (wants(self, 0)) {
            MutMap(pgrad(self, 0).data(), m, k).noalias() += dc * ConstMap(self.parents[1]->data.data(), k, n).transpose();
        }
        if (wants(self, 1)) {
            MutMap(pgrad(self, 1).data(), k, n).noalias() += ConstMap(self.parents[0]->data.data(), m, k).transpose() * dc;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (!wants(self, p)) continue;
            auto& g = pgrad(self, p);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        if (wants(self, 0)) {
            auto& g = pgrad(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(self, 1)) {
            auto& g = pgrad(self, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const auto& x = self.parents[0]->data;
        const auto& y = self.parents[1]->data;
        if (wants(self, 0)) {
            auto& g = pgrad(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
        }
        if (wants(self, 1)) {
            auto& g = pgrad(self, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    const std::size_t n = last_dim(a);
    if (bias.rank() != 1 || bias.dim(0) != n) {
        throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                             shape_to_string(a.shape()));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.at(i % n);
    return Tensor::make_result(a.shape(), std::move(out), {a, bias}, [n](detail::Node& self) {
        if (wants(self, 0)) {
            auto& g = pgrad(self, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(self, 1)) {
            auto& g = pgrad(self, 1);
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
        }
    });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    return Tensor::make_result({1}, {total}, {a}, [](detail::Node& self) {
        auto& g = pgrad(self, 0);
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ContractError("mean of an empty tensor");
    const double inv = 1.0 / static_cast<double>(a.numel());
    double total = 0.0;
    for (double v : a.data()) total += v;
    return Tensor::make_result({1}, {total * inv}, {a}, [inv](detail::Node& self) {
        auto& g = pgrad(self, 0);
        for (auto& v : g) v += self.grad[0] * inv;
    });
}

Tensor log(const Tensor& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
    return unary(
        a, [](double x) { return x * stable_sigmoid(x); },
        [](double x, double) {
            double s = stable_sigmoid(x);
            return s + x * s * (1.0 - s);
        });
}

Tensor sum_last(const Tensor& a) {
    const std::size_t n = last_dim(a), rows = row_count(a);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r] += a.at(r * n + c);
    return Tensor::make_result(std::move(out_shape), std::move(out), {a}, [n, rows](detail::Node& self) {
        auto& g = pgrad(self, 0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[r];
    });
}

Tensor softmax_rows(const Tensor& a) {
    const std::size_t n = last_dim(a), rows = row_count(a);
    std::vector<double> out(a.numel());
    const auto in = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in.data() + r * n;
        double* y = out.data() + r * n;
        double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) z += (y[c] = std::exp(x[c] - mx));
        for (std::size_t c = 0; c < n; ++c) y[c] /= z;
    }
    return Tensor::make_result(a.shape(), std::move(out), {a}, [n, rows](detail::Node& self) {
        auto& g = pgrad(self, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * n;
            const double* dy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
            for (std::size_t c = 0; c < n; ++c) g[r * n + c] += y[c] * (dy[c] - dot);
        }
    });
}

Tensor normalize_rows(const Tensor& a) {
    const std::size_t n = last_dim(a), rows = row_count(a);
    std::vector<double> out(a.numel());
    std::vector<double> sums(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) sums[r] += a.at(r * n + c);
        // NaN propagates so the trainer can report it.
        if (sums[r] <= 0.0) throw ContractError("normalize_rows: row " + std::to_string(r) + " has non-positive sum");
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a.at(r * n + c) / sums[r];
    }
    return Tensor::make_result(a.shape(), std::move(out), {a}, [n, rows, sums](detail::Node& self) {
        auto& g = pgrad(self, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * n;
            const double* dy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
            for (std::size_t c = 0; c < n; ++c) g[r * n + c] += (dy[c] - dot) / sums[r];
        }
    });
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
    const std::size_t n = last_dim(x), rows = row_count(x);
    if (weight.rank() != 1 || weight.dim(0) != n) {
        throw DimensionError("rms_norm: weight " + shape_to_string(weight.shape()) + " does not match " +
                             shape_to_string(x.shape()));
    }
    std::vector<double> out(x.numel());
    std::vector<double> inv_rms(rows);
    const auto in = x.data();
    const auto w = weight.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double ms = 0.0;
        for (std::size_t c = 0; c < n; ++c) ms += in[r * n + c] * in[r * n + c];
        inv_rms[r] = 1.0 / std::sqrt(ms / static_cast<double>(n) + eps);
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = in[r * n + c] * inv_rms[r] * w[c];
    }
    return Tensor::make_result(x.shape(), std::move(out), {x, weight}, [n, rows, inv_rms](detail::Node& self) {
        const auto& xs = self.parents[0]->data;
        const auto& ws = self.parents[1]->data;
        const bool want_x = wants(self, 0), want_w = wants(self, 1);
        std::vector<double>* gx = want_x ? &pgrad(self, 0) : nullptr;
        std::vector<double>* gw = want_w ? &pgrad(self, 1) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
            const double inv = inv_rms[r];
            const double* xr = xs.data() + r * n;
            const double* dy = self.grad.data() + r * n;
            double dot = 0.0;  // mean(dxhat * xhat)
            for (std::size_t c = 0; c < n; ++c) {
                double xhat = xr[c] * inv;
                if (gw) (*gw)[c] += dy[c] * xhat;
                dot += dy[c] * ws[c] * xhat;
            }
            dot /= static_cast<double>(n);
            if (gx) {
                for (std::size_t c = 0; c < n; ++c) (*gx)[r * n + c] += inv * (dy[c] * ws[c] - xr[c] * inv * dot);
            }
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
    const std::size_t v = last_dim(logits), rows = row_count(logits);
    if (targets.size() != rows) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(rows) + " rows");
    }
    std::vector<double> probs(logits.numel());
    std::size_t counted = 0;
    double total = 0.0;
    const auto in = logits.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const auto t = targets[r];
        if (t == kIgnoreIndex) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            throw IndexError("cross_entropy: target id " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(v));
        }
        const double* x = in.data() + r * v;
        double* p = probs.data() + r * v;
        double mx = *std::max_element(x, x + v);
        double z = 0.0;
        for (std::size_t c = 0; c < v; ++c) z += (p[c] = std::exp(x[c] - mx));
        for (std::size_t c = 0; c < v; ++c) p[c] /= z;
        total += (std::log(z) + mx) - x[t];
        ++counted;
    }
    const double inv = counted ? 1.0 / static_cast<double>(counted) : 0.0;
    std::vector<std::int64_t> tgt(targets.begin(), targets.end());
    return Tensor::make_result(
        {1}, {total * inv}, {logits},
        [v, rows, inv, probs = std::move(probs), tgt = std::move(tgt)](detail::Node& self) {
            auto& g = pgrad(self, 0);
            const double up = self.grad[0] * inv;
            for (std::size_t r = 0; r < rows; ++r) {
                if (tgt[r] == kIgnoreIndex) continue;
                for (std::size_t c = 0; c < v; ++c) g[r * v + c] += up * probs[r * v + c];
                g[r * v + static_cast<std::size_t>(tgt[r])] -= up;
            }
        });
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> rows, Shape out_shape) {
    const std::size_t d = last_dim(x), src_rows = row_count(x);
    if (out_shape.empty() || out_shape.back() != d || shape_numel(out_shape) != rows.size() * d) {
        throw DimensionError("gather_rows: output shape " + shape_to_string(out_shape) + " inconsistent with " +
                             std::to_string(rows.size()) + " rows of width " + std::to_string(d));
    }
    std::vector<double> out(rows.size() * d, 0.0);
    const auto in = x.data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto s = rows[r];
        if (s < 0) continue;
        if (static_cast<std::size_t>(s) >= src_rows) {
            throw IndexError("gather_rows: row " + std::to_string(s) + " out of range for " + std::to_string(src_rows));
        }
        std::copy_n(in.data() + static_cast<std::size_t>(s) * d, d, out.data() + r * d);
    }
    std::vector<std::int64_t> idx(rows.begin(), rows.end());
    return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [d, idx = std::move(idx)](detail::Node& self) {
        auto& g = pgrad(self, 0);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] < 0) continue;
            double* dst = g.data() + static_cast<std::size_t>(idx[r]) * d;
            const double* src = self.grad.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
    if (table.rank() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_to_string(table.shape()));
    for (auto id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= table.dim(0)) {
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(table.dim(0)));
        }
    }
    return gather_rows(table, ids, {ids.size(), table.dim(1)});
}

Tensor rope(const Tensor& x, std::span<const std::int64_t> positions, std::size_t n_heads, double theta) {
    const std::size_t width = last_dim(x), rows = row_count(x);
    if (n_heads == 0 || width % n_heads != 0 || (width / n_heads) % 2 != 0) {
        throw DimensionError("rope: width " + std::to_string(width) + " not divisible into " + std::to_string(n_heads) +
                             " even-sized heads");
    }
    if (positions.size() != rows) {
        throw ContractError("rope: " + std::to_string(positions.size()) + " positions for " + std::to_string(rows) +
                            " rows");
    }
    const std::size_t dh = width / n_heads, half = dh / 2;
    std::vector<double> cosv(rows * half), sinv(rows * half);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < half; ++j) {
            double freq = std::pow(theta, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
            double angle = static_cast<double>(positions[r]) * freq;
            cosv[r * half + j] = std::cos(angle);
            sinv[r * half + j] = std::sin(angle);
        }
    }
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t base = r * width + h * dh;
            for (std::size_t j = 0; j < half; ++j) {
                double c = cosv[r * half + j], s = sinv[r * half + j];
                double x1 = in[base + j], x2 = in[base + j + half];
                out[base + j] = x1 * c - x2 * s;
                out[base + j + half] = x1 * s + x2 * c;
            }
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x},
                               [rows, width, n_heads, dh, half, cosv, sinv](detail::Node& self) {
                                   auto& g = pgrad(self, 0);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t h = 0; h < n_heads; ++h) {
                                           const std::size_t base = r * width + h * dh;
                                           for (std::size_t j = 0; j < half; ++j) {
                                               double c = cosv[r * half + j], s = sinv[r * half + j];
                                               double d1 = self.grad[base + j], d2 = self.grad[base + j + half];
                                               g[base + j] += d1 * c + d2 * s;
                                               g[base + j + half] += -d1 * s + d2 * c;
                                           }
                                       }
                                   }
                               });
}

Segments Segments::uniform(std::size_t count, std::size_t length) {
    Segments s;
    for (std::size_t i = 0; i < count; ++i) {
        s.offsets.push_back(i * length);
        s.lengths.push_back(length);
    }
    return s;
}

std::size_t Segments::total_rows() const { return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}); }

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Segments& segments,
                        std::size_t n_heads) {
    require_same_shape(q, k, "causal_attention");
    require_same_shape(q, v, "causal_attention");
    const std::size_t width = last_dim(q), rows = row_count(q);
    if (n_heads == 0 || width % n_heads != 0) {
        throw DimensionError("causal_attention: width " + std::to_string(width) + " not divisible by " +
                             std::to_string(n_heads) + " heads");
    }
    if (segments.offsets.size() != segments.lengths.size()) throw ContractError("causal_attention: malformed segments");
    for (std::size_t s = 0; s < segments.offsets.size(); ++s) {
        if (segments.offsets[s] + segments.lengths[s] > rows) {
            throw ContractError("causal_attention: segment exceeds " + std::to_string(rows) + " rows");
        }
    }
    const std::size_t dh = width / n_heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(width));
    std::vector<double> out(q.numel(), 0.0);
    // Attention probabilities per (segment, head), kept for backward.
    std::vector<RowMat> probs;
    probs.reserve(segments.offsets.size() * n_heads);
    for (std::size_t s = 0; s < segments.offsets.size(); ++s) {
        const auto len = static_cast<Eigen::Index>(segments.lengths[s]);
        const std::size_t off = segments.offsets[s] * width;
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t base = off + h * dh;
            StridedConst qm(q.data().data() + base, len, dh, stride);
            StridedConst km(k.data().data() + base, len, dh, stride);
            StridedConst vm(v.data().data() + base, len, dh, stride);
            RowMat p = (qm * km.transpose()) * scale_factor;
            for (Eigen::Index i = 0; i < len; ++i) {
                double mx = p.row(i).head(i + 1).maxCoeff();
                double z = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) z += (p(i, j) = std::exp(p(i, j) - mx));
                for (Eigen::Index j = 0; j <= i; ++j) p(i, j) /= z;
                for (Eigen::Index j = i + 1; j < len; ++j) p(i, j) = 0.0;
            }
            StridedMut(out.data() + base, len, dh, stride).noalias() = p * vm;
            probs.push_back(std::move(p));
        }
    }
    return Tensor::make_result(
        q.shape(), std::move(out), {q, k, v},
        [segments, n_heads, width, dh, scale_factor, probs = std::move(probs)](detail::Node& self) {
            const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(width));
            const bool wq = wants(self, 0), wk = wants(self, 1), wv = wants(self, 2);
            double* gq = wq ? pgrad(self, 0).data() : nullptr;
            double* gk = wk ? pgrad(self, 1).data() : nullptr;
            double* gv = wv ? pgrad(self, 2).data() : nullptr;
            const double* qd = self.parents[0]->data.data();
            const double* kd = self.parents[1]->data.data();
            const double* vd = self.parents[2]->data.data();
            std::size_t idx = 0;
            for (std::size_t s = 0; s < segments.offsets.size(); ++s) {
                const auto len = static_cast<Eigen::Index>(segments.lengths[s]);
                const std::size_t off = segments.offsets[s] * width;
                for (std::size_t h = 0; h < n_heads; ++h, ++idx) {
                    const std::size_t base = off + h * dh;
                    const RowMat& p = probs[idx];
                    StridedConst dout(self.grad.data() + base, len, dh, stride);
                    if (wv) StridedMut(gv + base, len, dh, stride).noalias() += p.transpose() * dout;
                    if (!wq && !wk) continue;
                    RowMat dp = dout * StridedConst(vd + base, len, dh, stride).transpose();
                    // Softmax backward, then fold in the score scale.
                    for (Eigen::Index i = 0; i < len; ++i) {
                        double dot = 0.0;
                        for (Eigen::Index j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
                        for (Eigen::Index j = 0; j <= i; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale_factor;
                        for (Eigen::Index j = i + 1; j < len; ++j) dp(i, j) = 0.0;
                    }
                    if (wq) StridedMut(gq + base, len, dh, stride).noalias() += dp * StridedConst(kd + base, len, dh, stride);
                    if (wk) {
                        StridedMut(gk + base, len, dh, stride).noalias() +=
                            dp.transpose() * StridedConst(qd + base, len, dh, stride);
                    }
                }
            }
        });
}

Tensor fuse_gate(const Tensor& x_v, const Tensor& x_d, const Tensor& probs, std::span<const std::uint8_t> mask,
                 const Tensor& beta) {
    require_same_shape(x_v, x_d, "fuse_gate");
    const std::size_t d = last_dim(x_v), rows = row_count(x_v);
    if (probs.numel() != rows || mask.size() != rows) {
        throw DimensionError("fuse_gate: " + std::to_string(probs.numel()) + " probs / " + std::to_string(mask.size()) +
                             " mask entries for " + std::to_string(rows) + " rows");
    }
    if (beta.numel() != 1) throw DimensionError("fuse_gate: beta must be a scalar");
    const double b = beta.item();
    std::vector<double> out(x_v.data().begin(), x_v.data().end());
    const auto xd = x_d.data();
    const auto p = probs.data();
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        const double gate = b * p[r];
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = gate * out[r * d + c] + (1.0 - gate) * xd[r * d + c];
    }
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    return Tensor::make_result(
        x_v.shape(), std::move(out), {x_v, x_d, probs, beta}, [d, rows, m = std::move(m)](detail::Node& self) {
            const auto& xv = self.parents[0]->data;
            const auto& xd = self.parents[1]->data;
            const auto& pv = self.parents[2]->data;
            const double b = self.parents[3]->data[0];
            double* gxv = wants(self, 0) ? pgrad(self, 0).data() : nullptr;
            double* gxd = wants(self, 1) ? pgrad(self, 1).data() : nullptr;
            double* gp = wants(self, 2) ? pgrad(self, 2).data() : nullptr;
            double* gb = wants(self, 3) ? pgrad(self, 3).data() : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* dy = self.grad.data() + r * d;
                if (!m[r]) {
                    if (gxv)
                        for (std::size_t c = 0; c < d; ++c) gxv[r * d + c] += dy[c];
                    continue;
                }
                const double gate = b * pv[r];
                double dgate = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    if (gxv) gxv[r * d + c] += gate * dy[c];
                    if (gxd) gxd[r * d + c] += (1.0 - gate) * dy[c];
                    dgate += dy[c] * (xv[r * d + c] - xd[r * d + c]);
                }
                if (gp) gp[r] += dgate * b;
                if (gb) gb[0] += dgate * pv[r];
            }
        });
}

}  // namespace dnd
