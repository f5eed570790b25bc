// SPDX-License-Identifier: Apache-2.0
#include "mgsd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mgsd/errors.hpp"

namespace mgsd {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

std::size_t last_dim(const Tensor& x) {
    if (x.rank() == 0) throw DimensionError("tensor has no axes");
    return x.shape().back();
}

Shape with_last(Shape s, std::size_t last) {
    s.back() = last;
    return s;
}

// Splits a conv input into (batch, frames, channels).
void conv_dims(const Tensor& x, std::size_t& B, std::size_t& T, std::size_t& C, const char* op) {
    if (x.rank() == 2) {
        B = 1;
        T = x.dim(0);
        C = x.dim(1);
    } else if (x.rank() == 3) {
        B = x.dim(0);
        T = x.dim(1);
        C = x.dim(2);
    } else {
        throw DimensionError(std::string(op) + ": expected [T,C] or [B,T,C], got " +
                             shape_str(x.shape()));
    }
}

}  // namespace

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double keyed_uniform(std::uint64_t seed, std::uint64_t step, std::uint64_t key, std::uint64_t index) {
    const auto h = mix64(mix64(mix64(seed, step), key), index);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
        throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " are incompatible");
    }
    const std::size_t n = b.dim(0), p = b.dim(1);
    const std::size_t rows = a.numel() / n;
    auto out = Tensor::zeros(with_last(a.shape(), p));
    {
        auto A = a.data();
        auto Bm = b.data();
        auto C = out.data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < n; ++i) {
                const double av = A[r * n + i];
                for (std::size_t j = 0; j < p; ++j) C[r * p + j] += av * Bm[i * p + j];
            }
        }
    }
    if (g.track(out, {&a, &b})) {
        g.record(out, [a, b, out, rows, n, p]() mutable {
            auto dC = out.grad();
            if (a.requires_grad()) {
                auto dA = a.grad();
                auto Bm = b.data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < n; ++i) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < p; ++j) s += dC[r * p + j] * Bm[i * p + j];
                        dA[r * n + i] += s;
                    }
            }
            if (b.requires_grad()) {
                auto dB = b.grad();
                auto A = a.data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < n; ++i) {
                        const double av = A[r * n + i];
                        for (std::size_t j = 0; j < p; ++j) dB[i * p + j] += av * dC[r * p + j];
                    }
            }
        });
    }
    return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto out = Tensor::zeros(a.shape());
    auto A = a.data();
    auto Bv = b.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) O[i] = A[i] + Bv[i];
    if (g.track(out, {&a, &b})) {
        g.record(out, [a, b, out]() mutable {
            auto d = out.grad();
            if (a.requires_grad()) {
                auto da = a.grad();
                for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i];
            }
            if (b.requires_grad()) {
                auto db = b.grad();
                for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i];
            }
        });
    }
    return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto out = Tensor::zeros(a.shape());
    auto A = a.data();
    auto Bv = b.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) O[i] = A[i] * Bv[i];
    if (g.track(out, {&a, &b})) {
        g.record(out, [a, b, out]() mutable {
            auto d = out.grad();
            if (a.requires_grad()) {
                auto da = a.grad();
                auto Bv = b.data();
                for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * Bv[i];
            }
            if (b.requires_grad()) {
                auto db = b.grad();
                auto A = a.data();
                for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * A[i];
            }
        });
    }
    return out;
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
    auto out = Tensor::zeros(x.shape());
    auto X = x.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) O[i] = X[i] * factor;
    if (g.track(out, {&x})) {
        g.record(out, [x, out, factor]() mutable {
            auto d = out.grad();
            auto dx = x.grad();
            for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * factor;
        });
    }
    return out;
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
    const std::size_t C = last_dim(x);
    if (bias.rank() != 1 || bias.dim(0) != C) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                             shape_str(x.shape()));
    }
    auto out = Tensor::zeros(x.shape());
    auto X = x.data();
    auto Bv = bias.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) O[i] = X[i] + Bv[i % C];
    if (g.track(out, {&x, &bias})) {
        g.record(out, [x, bias, out, C]() mutable {
            auto d = out.grad();
            if (x.requires_grad()) {
                auto dx = x.grad();
                for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
            }
            if (bias.requires_grad()) {
                auto db = bias.grad();
                for (std::size_t i = 0; i < d.size(); ++i) db[i % C] += d[i];
            }
        });
    }
    return out;
}

Tensor scale_channels(Graph& g, const Tensor& x, const Tensor& w) {
    const std::size_t C = last_dim(x);
    if (w.rank() != 1 || w.dim(0) != C) {
        throw DimensionError("scale_channels: weights " + shape_str(w.shape()) + " vs input " +
                             shape_str(x.shape()));
    }
    auto out = Tensor::zeros(x.shape());
    auto X = x.data();
    auto W = w.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) O[i] = X[i] * W[i % C];
    if (g.track(out, {&x, &w})) {
        g.record(out, [x, w, out, C]() mutable {
            auto d = out.grad();
            if (x.requires_grad()) {
                auto dx = x.grad();
                auto W = w.data();
                for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * W[i % C];
            }
            if (w.requires_grad()) {
                auto dw = w.grad();
                auto X = x.data();
                for (std::size_t i = 0; i < d.size(); ++i) dw[i % C] += d[i] * X[i];
            }
        });
    }
    return out;
}

Tensor sigmoid(Graph& g, const Tensor& x) {
    auto out = Tensor::zeros(x.shape());
    auto X = x.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) {
        const double v = X[i];
        O[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    if (g.track(out, {&x})) {
        g.record(out, [x, out]() mutable {
            auto d = out.grad();
            auto O = out.data();
            auto dx = x.grad();
            for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * O[i] * (1.0 - O[i]);
        });
    }
    return out;
}

Tensor gelu(Graph& g, const Tensor& x) {
    auto out = Tensor::zeros(x.shape());
    auto X = x.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) {
        O[i] = 0.5 * X[i] * (1.0 + std::erf(X[i] * std::numbers::sqrt2 / 2.0));
    }
    if (g.track(out, {&x})) {
        g.record(out, [x, out]() mutable {
            auto d = out.grad();
            auto X = x.data();
            auto dx = x.grad();
            const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
            for (std::size_t i = 0; i < d.size(); ++i) {
                const double v = X[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                dx[i] += d[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t C = last_dim(x);
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + ", beta " +
                             shape_str(beta.shape()) + " vs input " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / C;
    auto out = Tensor::zeros(x.shape());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    {
        auto X = x.data();
        auto G = gamma.data();
        auto Bt = beta.data();
        auto O = out.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = X.data() + r * C;
            double mean = 0.0;
            for (std::size_t c = 0; c < C; ++c) mean += row[c];
            mean /= static_cast<double>(C);
            double var = 0.0;
            for (std::size_t c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
            var /= static_cast<double>(C);
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std[r] = inv;
            for (std::size_t c = 0; c < C; ++c) {
                const double h = (row[c] - mean) * inv;
                xhat[r * C + c] = h;
                O[r * C + c] = G[c] * h + Bt[c];
            }
        }
    }
    if (g.track(out, {&x, &gamma, &beta})) {
        g.record(out, [x, gamma, beta, out, C, rows, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)]() mutable {
            auto d = out.grad();
            if (gamma.requires_grad()) {
                auto dg = gamma.grad();
                for (std::size_t i = 0; i < d.size(); ++i) dg[i % C] += d[i] * xhat[i];
            }
            if (beta.requires_grad()) {
                auto db = beta.grad();
                for (std::size_t i = 0; i < d.size(); ++i) db[i % C] += d[i];
            }
            if (x.requires_grad()) {
                auto dx = x.grad();
                auto G = gamma.data();
                const double invC = 1.0 / static_cast<double>(C);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double dh = d[r * C + c] * G[c];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * C + c];
                    }
                    mean_dh *= invC;
                    mean_dh_h *= invC;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double dh = d[r * C + c] * G[c];
                        dx[r * C + c] += inv_std[r] * (dh - mean_dh - xhat[r * C + c] * mean_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv1d_depthwise(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    std::size_t B = 0, T = 0, C = 0;
    conv_dims(x, B, T, C, "conv1d_depthwise");
    if (kernel.rank() != 2 || kernel.dim(1) != C || bias.shape() != Shape{C}) {
        throw DimensionError("conv1d_depthwise: kernel " + shape_str(kernel.shape()) + ", bias " +
                             shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
    }
    const std::size_t k = kernel.dim(0);
    if (k % 2 == 0) throw ConfigError("conv1d_depthwise: kernel size must be odd, got " + std::to_string(k));
    const auto half = static_cast<std::ptrdiff_t>(k / 2);
    const auto Ts = static_cast<std::ptrdiff_t>(T);

    auto out = Tensor::zeros(x.shape());
    {
        auto X = x.data();
        auto K = kernel.data();
        auto Bv = bias.data();
        auto O = out.data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::ptrdiff_t t = 0; t < Ts; ++t) {
                double* o = O.data() + (b * T + static_cast<std::size_t>(t)) * C;
                for (std::size_t c = 0; c < C; ++c) o[c] = Bv[c];
                for (std::size_t i = 0; i < k; ++i) {
                    const auto src = t + static_cast<std::ptrdiff_t>(i) - half;
                    if (src < 0 || src >= Ts) continue;
                    const double* xi = X.data() + (b * T + static_cast<std::size_t>(src)) * C;
                    const double* ki = K.data() + i * C;
                    for (std::size_t c = 0; c < C; ++c) o[c] += ki[c] * xi[c];
                }
            }
    }
    if (g.track(out, {&x, &kernel, &bias})) {
        g.record(out, [x, kernel, bias, out, B, T, C, k, half, Ts]() mutable {
            auto d = out.grad();
            if (bias.requires_grad()) {
                auto db = bias.grad();
                for (std::size_t i = 0; i < d.size(); ++i) db[i % C] += d[i];
            }
            const bool need_x = x.requires_grad();
            const bool need_k = kernel.requires_grad();
            if (!need_x && !need_k) return;
            auto X = x.data();
            auto K = kernel.data();
            auto dx = x.grad();
            auto dk = kernel.grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::ptrdiff_t t = 0; t < Ts; ++t) {
                    const double* dout = d.data() + (b * T + static_cast<std::size_t>(t)) * C;
                    for (std::size_t i = 0; i < k; ++i) {
                        const auto src = t + static_cast<std::ptrdiff_t>(i) - half;
                        if (src < 0 || src >= Ts) continue;
                        const std::size_t base = (b * T + static_cast<std::size_t>(src)) * C;
                        for (std::size_t c = 0; c < C; ++c) {
                            if (need_x) dx[base + c] += dout[c] * K[i * C + c];
                            if (need_k) dk[i * C + c] += dout[c] * X[base + c];
                        }
                    }
                }
        });
    }
    return out;
}

Tensor conv1d_full(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    std::size_t B = 0, T = 0, Cin = 0;
    conv_dims(x, B, T, Cin, "conv1d_full");
    if (kernel.rank() != 3 || kernel.dim(1) != Cin || bias.rank() != 1 ||
        bias.dim(0) != kernel.dim(2)) {
        throw DimensionError("conv1d_full: kernel " + shape_str(kernel.shape()) + ", bias " +
                             shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
    }
    const std::size_t k = kernel.dim(0), Cout = kernel.dim(2);
    if (k % 2 == 0) throw ConfigError("conv1d_full: kernel size must be odd, got " + std::to_string(k));
    const auto half = static_cast<std::ptrdiff_t>(k / 2);
    const auto Ts = static_cast<std::ptrdiff_t>(T);

    auto out = Tensor::zeros(with_last(x.shape(), Cout));
    {
        auto X = x.data();
        auto K = kernel.data();
        auto Bv = bias.data();
        auto O = out.data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::ptrdiff_t t = 0; t < Ts; ++t) {
                double* o = O.data() + (b * T + static_cast<std::size_t>(t)) * Cout;
                for (std::size_t co = 0; co < Cout; ++co) o[co] = Bv[co];
                for (std::size_t i = 0; i < k; ++i) {
                    const auto src = t + static_cast<std::ptrdiff_t>(i) - half;
                    if (src < 0 || src >= Ts) continue;
                    const double* xi = X.data() + (b * T + static_cast<std::size_t>(src)) * Cin;
                    for (std::size_t ci = 0; ci < Cin; ++ci) {
                        const double* kr = K.data() + (i * Cin + ci) * Cout;
                        for (std::size_t co = 0; co < Cout; ++co) o[co] += kr[co] * xi[ci];
                    }
                }
            }
    }
    if (g.track(out, {&x, &kernel, &bias})) {
        g.record(out, [x, kernel, bias, out, B, T, Cin, Cout, k, half, Ts]() mutable {
            auto d = out.grad();
            if (bias.requires_grad()) {
                auto db = bias.grad();
                for (std::size_t i = 0; i < d.size(); ++i) db[i % Cout] += d[i];
            }
            const bool need_x = x.requires_grad();
            const bool need_k = kernel.requires_grad();
            if (!need_x && !need_k) return;
            auto X = x.data();
            auto K = kernel.data();
            auto dx = x.grad();
            auto dk = kernel.grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::ptrdiff_t t = 0; t < Ts; ++t) {
                    const double* dout = d.data() + (b * T + static_cast<std::size_t>(t)) * Cout;
                    for (std::size_t i = 0; i < k; ++i) {
                        const auto src = t + static_cast<std::ptrdiff_t>(i) - half;
                        if (src < 0 || src >= Ts) continue;
                        const std::size_t base = (b * T + static_cast<std::size_t>(src)) * Cin;
                        for (std::size_t ci = 0; ci < Cin; ++ci) {
                            const std::size_t kbase = (i * Cin + ci) * Cout;
                            double acc = 0.0;
                            for (std::size_t co = 0; co < Cout; ++co) {
                                acc += dout[co] * K[kbase + co];
                                if (need_k) dk[kbase + co] += dout[co] * X[base + ci];
                            }
                            if (need_x) dx[base + ci] += acc;
                        }
                    }
                }
        });
    }
    return out;
}

Tensor apply_mask(Graph& g, const Tensor& x, const Tensor& mask) {
    Shape expected(x.shape().begin(), x.shape().end() - 1);
    if (mask.shape() != expected) {
        throw DimensionError("apply_mask: mask " + shape_str(mask.shape()) + " vs input " +
                             shape_str(x.shape()));
    }
    const std::size_t C = last_dim(x);
    auto out = Tensor::zeros(x.shape());
    auto X = x.data();
    auto Mk = mask.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) O[i] = Mk[i / C] != 0.0 ? X[i] : 0.0;
    if (g.track(out, {&x})) {
        g.record(out, [x, mask, out, C]() mutable {
            auto d = out.grad();
            auto dx = x.grad();
            auto Mk = mask.data();
            for (std::size_t i = 0; i < d.size(); ++i)
                if (Mk[i / C] != 0.0) dx[i] += d[i];
        });
    }
    return out;
}

Tensor softmax_masked(Graph& g, const Tensor& x, const Tensor& mask, std::size_t axis) {
    require_same_shape(x, mask, "softmax_masked");
    if (axis >= x.rank()) throw DimensionError("softmax_masked: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t n = x.dim(axis);

    auto out = Tensor::zeros(x.shape());
    {
        auto X = x.data();
        auto Mk = mask.data();
        auto O = out.data();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t t = 0; t < n; ++t) {
                    const std::size_t idx = base + t * inner;
                    if (Mk[idx] != 0.0) mx = std::max(mx, X[idx]);
                }
                if (mx == -std::numeric_limits<double>::infinity()) {
                    throw DataError("softmax_masked: every position along the axis is masked");
                }
                double z = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    const std::size_t idx = base + t * inner;
                    if (Mk[idx] != 0.0) {
                        O[idx] = std::exp(X[idx] - mx);
                        z += O[idx];
                    }
                }
                for (std::size_t t = 0; t < n; ++t) O[base + t * inner] /= z;
            }
    }
    if (g.track(out, {&x})) {
        g.record(out, [x, out, outer, inner, n]() mutable {
            auto d = out.grad();
            auto Y = out.data();
            auto dx = x.grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n * inner + in;
                    double dot = 0.0;
                    for (std::size_t t = 0; t < n; ++t) dot += Y[base + t * inner] * d[base + t * inner];
                    for (std::size_t t = 0; t < n; ++t) {
                        const std::size_t idx = base + t * inner;
                        dx[idx] += Y[idx] * (d[idx] - dot);
                    }
                }
        });
    }
    return out;
}

Tensor dropout(Graph& g, const Tensor& x, double p) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
    }
    const auto key = g.next_key();
    if (!g.training() || p == 0.0) {
        // Identity still goes through the graph so gradients reach x.
        return scale(g, x, 1.0);
    }
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> factor(x.numel());
    for (std::size_t i = 0; i < factor.size(); ++i) {
        factor[i] = keyed_uniform(g.seed(), g.step(), key, i) >= p ? keep_scale : 0.0;
    }
    auto out = Tensor::zeros(x.shape());
    auto X = x.data();
    auto O = out.data();
    for (std::size_t i = 0; i < O.size(); ++i) O[i] = X[i] * factor[i];
    if (g.track(out, {&x})) {
        g.record(out, [x, out, factor = std::move(factor)]() mutable {
            auto d = out.grad();
            auto dx = x.grad();
            for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * factor[i];
        });
    }
    return out;
}

Tensor slice_last(Graph& g, const Tensor& x, std::size_t begin, std::size_t end) {
    const std::size_t C = last_dim(x);
    if (begin >= end || end > C) {
        throw DimensionError("slice_last: range [" + std::to_string(begin) + "," +
                             std::to_string(end) + ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t W = end - begin;
    const std::size_t rows = x.numel() / C;
    auto out = Tensor::zeros(with_last(x.shape(), W));
    auto X = x.data();
    auto O = out.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < W; ++c) O[r * W + c] = X[r * C + begin + c];
    if (g.track(out, {&x})) {
        g.record(out, [x, out, rows, C, W, begin]() mutable {
            auto d = out.grad();
            auto dx = x.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < W; ++c) dx[r * C + begin + c] += d[r * W + c];
        });
    }
    return out;
}

Tensor concat_last(Graph& g, std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_last: no inputs");
    Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (Shape(p.shape().begin(), p.shape().end() - 1) != lead) {
            throw DimensionError("concat_last: " + shape_str(p.shape()) + " does not match " +
                                 shape_str(parts[0].shape()));
        }
        total += p.shape().back();
    }
    const std::size_t rows = shape_numel(lead);
    auto out = Tensor::zeros(with_last(parts[0].shape(), total));
    {
        auto O = out.data();
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t W = p.shape().back();
            auto P = p.data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < W; ++c) O[r * total + offset + c] = P[r * W + c];
            offset += W;
        }
    }
    if (g.track(out, parts)) {
        std::vector<Tensor> saved(parts.begin(), parts.end());
        g.record(out, [saved = std::move(saved), out, rows, total]() mutable {
            auto d = out.grad();
            std::size_t offset = 0;
            for (auto& p : saved) {
                const std::size_t W = p.shape().back();
                if (p.requires_grad()) {
                    auto dp = p.grad();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < W; ++c) dp[r * W + c] += d[r * total + offset + c];
                }
                offset += W;
            }
        });
    }
    return out;
}

Tensor mean_of(Graph& g, std::span<const Tensor> parts) {
    if (parts.empty()) throw ConfigError("mean_of: at least one input is required");
    for (const auto& p : parts) require_same_shape(parts[0], p, "mean_of");
    const double inv = 1.0 / static_cast<double>(parts.size());
    auto out = Tensor::zeros(parts[0].shape());
    auto O = out.data();
    for (const auto& p : parts) {
        auto P = p.data();
        for (std::size_t i = 0; i < O.size(); ++i) O[i] += P[i];
    }
    for (auto& v : O) v *= inv;
    if (g.track(out, parts)) {
        std::vector<Tensor> saved(parts.begin(), parts.end());
        g.record(out, [saved = std::move(saved), out, inv]() mutable {
            auto d = out.grad();
            for (auto& p : saved) {
                if (!p.requires_grad()) continue;
                auto dp = p.grad();
                for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i] * inv;
            }
        });
    }
    return out;
}

Tensor weighted_sum(Graph& g, std::span<const Tensor> parts, const Tensor& weights) {
    if (parts.empty()) throw ConfigError("weighted_sum: at least one input is required");
    if (weights.shape() != Shape{parts.size()}) {
        throw DimensionError("weighted_sum: weights " + shape_str(weights.shape()) + " for " +
                             std::to_string(parts.size()) + " inputs");
    }
    for (const auto& p : parts) require_same_shape(parts[0], p, "weighted_sum");
    auto out = Tensor::zeros(parts[0].shape());
    auto O = out.data();
    auto W = weights.data();
    for (std::size_t j = 0; j < parts.size(); ++j) {
        auto P = parts[j].data();
        for (std::size_t i = 0; i < O.size(); ++i) O[i] += W[j] * P[i];
    }
    std::vector<Tensor> all(parts.begin(), parts.end());
    all.push_back(weights);
    if (g.track(out, all)) {
        all.pop_back();
        g.record(out, [saved = std::move(all), weights, out]() mutable {
            auto d = out.grad();
            auto W = weights.data();
            for (std::size_t j = 0; j < saved.size(); ++j) {
                auto& p = saved[j];
                if (p.requires_grad()) {
                    auto dp = p.grad();
                    for (std::size_t i = 0; i < d.size(); ++i) dp[i] += d[i] * W[j];
                }
                if (weights.requires_grad()) {
                    auto P = p.data();
                    double s = 0.0;
                    for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * P[i];
                    weights.grad()[j] += s;
                }
            }
        });
    }
    return out;
}

Tensor gather_rows(Graph& g, const Tensor& x, std::span<const std::size_t> rows) {
    const std::size_t C = last_dim(x);
    const std::size_t N = x.numel() / C;
    for (auto r : rows) {
        if (r >= N) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range");
    }
    auto out = Tensor::zeros({rows.size(), C});
    auto X = x.data();
    auto O = out.data();
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(rows[i] * C), C,
                    O.begin() + static_cast<std::ptrdiff_t>(i * C));
    if (g.track(out, {&x})) {
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        g.record(out, [x, out, idx = std::move(idx), C]() mutable {
            auto d = out.grad();
            auto dx = x.grad();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t c = 0; c < C; ++c) dx[idx[i] * C + c] += d[i * C + c];
        });
    }
    return out;
}

Tensor sum_all(Graph& g, const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    auto out = Tensor::scalar(s);
    if (g.track(out, {&x})) {
        g.record(out, [x, out]() mutable {
            const double d = out.grad()[0];
            for (auto& v : x.grad()) v += d;
        });
    }
    return out;
}

}  // namespace mgsd
