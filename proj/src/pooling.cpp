// SPDX-License-Identifier: Apache-2.0
#include "mgsd/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mgsd/errors.hpp"
#include "mgsd/ops.hpp"

namespace mgsd {

Tensor mhap(Graph& g, const Tensor& G, const Tensor& mask, const MHAPParams& params) {
    if (G.rank() != 3 || mask.shape() != Shape{G.dim(0), G.dim(1)}) {
        throw DimensionError("mhap: G " + shape_str(G.shape()) + " with mask " + shape_str(mask.shape()));
    }
    const std::size_t B = G.dim(0), T = G.dim(1), Q = G.dim(2);
    const std::size_t k = params.u.dim(0);
    if (params.u.rank() != 2 || k == 0 || Q % k != 0 || params.u.dim(1) != Q / k) {
        throw DimensionError("mhap: head queries " + shape_str(params.u.shape()) +
                             " incompatible with Q=" + std::to_string(Q));
    }
    const std::size_t dh = Q / k;
    const double eps = params.eps_std;

    // Attention weights [B, k, T], attentive means and stds [B, Q].
    std::vector<double> attn(B * k * T, 0.0);
    auto out = Tensor::zeros({B, 2 * Q});
    {
        auto Gv = G.data();
        auto U = params.u.data();
        auto Mk = mask.data();
        auto O = out.data();
        for (std::size_t b = 0; b < B; ++b) {
            bool any = false;
            for (std::size_t t = 0; t < T; ++t) any = any || Mk[b * T + t] != 0.0;
            if (!any) throw DataError("mhap: utterance " + std::to_string(b) + " has no valid frames");
            for (std::size_t j = 0; j < k; ++j) {
                double* a = attn.data() + (b * k + j) * T;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t t = 0; t < T; ++t) {
                    if (Mk[b * T + t] == 0.0) continue;
                    const double* gt = Gv.data() + (b * T + t) * Q + j * dh;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += gt[c] * U[j * dh + c];
                    a[t] = s;
                    mx = std::max(mx, s);
                }
                double z = 0.0;
                for (std::size_t t = 0; t < T; ++t) {
                    if (Mk[b * T + t] == 0.0) continue;
                    a[t] = std::exp(a[t] - mx);
                    z += a[t];
                }
                for (std::size_t t = 0; t < T; ++t) a[t] /= z;

                double* mean = O.data() + b * 2 * Q + j * dh;
                double* stdv = O.data() + b * 2 * Q + Q + j * dh;
                for (std::size_t t = 0; t < T; ++t) {
                    if (a[t] == 0.0) continue;
                    const double* gt = Gv.data() + (b * T + t) * Q + j * dh;
                    for (std::size_t c = 0; c < dh; ++c) mean[c] += a[t] * gt[c];
                }
                for (std::size_t t = 0; t < T; ++t) {
                    if (a[t] == 0.0) continue;
                    const double* gt = Gv.data() + (b * T + t) * Q + j * dh;
                    for (std::size_t c = 0; c < dh; ++c) {
                        const double dev = gt[c] - mean[c];
                        stdv[c] += a[t] * dev * dev;
                    }
                }
                for (std::size_t c = 0; c < dh; ++c) stdv[c] = std::sqrt(stdv[c] + eps);
            }
        }
    }

    const Tensor u = params.u;
    if (g.track(out, {&G, &u})) {
        g.record(out, [G, u, out, attn = std::move(attn), B, T, Q, k, dh]() mutable {
            auto d = out.grad();
            auto Gv = G.data();
            auto U = u.data();
            auto O = out.data();
            const bool need_g = G.requires_grad();
            const bool need_u = u.requires_grad();
            std::vector<double> dvar(dh), da(T);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < k; ++j) {
                    const double* a = attn.data() + (b * k + j) * T;
                    const double* mean = O.data() + b * 2 * Q + j * dh;
                    const double* stdv = O.data() + b * 2 * Q + Q + j * dh;
                    const double* dmean = d.data() + b * 2 * Q + j * dh;
                    const double* dstd = d.data() + b * 2 * Q + Q + j * dh;
                    for (std::size_t c = 0; c < dh; ++c) dvar[c] = dstd[c] / (2.0 * stdv[c]);

                    // d var / d mean drops out: sum_t a_t (h_t - mu) = 0.
                    double weighted_da = 0.0;
                    for (std::size_t t = 0; t < T; ++t) {
                        da[t] = 0.0;
                        if (a[t] == 0.0) continue;
                        const double* gt = Gv.data() + (b * T + t) * Q + j * dh;
                        double s = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) {
                            const double dev = gt[c] - mean[c];
                            s += dmean[c] * gt[c] + dvar[c] * dev * dev;
                        }
                        da[t] = s;
                        weighted_da += a[t] * s;
                    }
                    for (std::size_t t = 0; t < T; ++t) {
                        if (a[t] == 0.0) continue;
                        const double dscore = a[t] * (da[t] - weighted_da);
                        const std::size_t base = (b * T + t) * Q + j * dh;
                        if (need_g) {
                            auto dG = G.grad();
                            for (std::size_t c = 0; c < dh; ++c) {
                                const double dev = Gv[base + c] - mean[c];
                                dG[base + c] += a[t] * dmean[c] + 2.0 * a[t] * dvar[c] * dev +
                                                dscore * U[j * dh + c];
                            }
                        }
                        if (need_u) {
                            auto dU = u.grad();
                            for (std::size_t c = 0; c < dh; ++c) dU[j * dh + c] += dscore * Gv[base + c];
                        }
                    }
                }
        });
    }
    return out;
}

Tensor component_stats(Graph& g, const Tensor& x, double eps) {
    if (x.rank() != 2) throw DimensionError("component_stats: expected [B, N], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), N = x.dim(1);
    auto out = Tensor::zeros({B, 2});
    {
        auto X = x.data();
        auto O = out.data();
        for (std::size_t b = 0; b < B; ++b) {
            double mean = 0.0;
            for (std::size_t i = 0; i < N; ++i) mean += X[b * N + i];
            mean /= static_cast<double>(N);
            double var = 0.0;
            for (std::size_t i = 0; i < N; ++i) var += (X[b * N + i] - mean) * (X[b * N + i] - mean);
            var /= static_cast<double>(N);
            O[b * 2] = mean;
            O[b * 2 + 1] = std::sqrt(var + eps);
        }
    }
    if (g.track(out, {&x})) {
        g.record(out, [x, out, B, N]() mutable {
            auto d = out.grad();
            auto X = x.data();
            auto O = out.data();
            auto dx = x.grad();
            const double invN = 1.0 / static_cast<double>(N);
            for (std::size_t b = 0; b < B; ++b) {
                const double mean = O[b * 2];
                const double dvar = d[b * 2 + 1] / (2.0 * O[b * 2 + 1]);
                for (std::size_t i = 0; i < N; ++i) {
                    dx[b * N + i] += d[b * 2] * invN + dvar * 2.0 * (X[b * N + i] - mean) * invN;
                }
            }
        });
    }
    return out;
}

Tensor classify(Graph& g, const Tensor& pooled, const HeadParams& params) {
    Tensor h = pooled;
    if (params.hidden_w.defined()) {
        h = gelu(g, add_bias(g, matmul(g, h, params.hidden_w), params.hidden_b));
    }
    if (params.w.rank() != 2 || params.w.dim(1) != 2) {
        throw DimensionError("classify: head weight must be [in, 2], got " + shape_str(params.w.shape()));
    }
    return add_bias(g, matmul(g, h, params.w), params.b);
}

}  // namespace mgsd
