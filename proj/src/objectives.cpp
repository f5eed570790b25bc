// SPDX-License-Identifier: Apache-2.0
#include "mgsd/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mgsd/errors.hpp"
#include "mgsd/ops.hpp"

namespace mgsd {

Tensor weighted_ce(Graph& g, const Tensor& logits, std::span<const int> labels, ClassWeights weights) {
    if (logits.rank() != 2 || logits.dim(1) != 2 || logits.dim(0) != labels.size()) {
        throw DimensionError("weighted_ce: logits " + shape_str(logits.shape()) + " for " +
                             std::to_string(labels.size()) + " labels");
    }
    if (!(weights.bonafide > 0.0 && weights.spoof > 0.0)) {
        throw ConfigError("weighted_ce: class weights must be positive");
    }
    const std::size_t B = labels.size();
    std::vector<double> prob(B * 2), w(B);
    double weight_sum = 0.0, loss = 0.0;
    auto Z = logits.data();
    for (std::size_t b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y != 0 && y != 1) throw DataError("weighted_ce: label must be 0 or 1, got " + std::to_string(y));
        const double z0 = Z[b * 2], z1 = Z[b * 2 + 1];
        const double mx = std::max(z0, z1);
        const double lse = mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx));
        prob[b * 2] = std::exp(z0 - lse);
        prob[b * 2 + 1] = std::exp(z1 - lse);
        w[b] = y == 0 ? weights.bonafide : weights.spoof;
        weight_sum += w[b];
        loss += w[b] * (lse - Z[b * 2 + static_cast<std::size_t>(y)]);
    }
    auto out = Tensor::scalar(loss / weight_sum);
    if (g.track(out, {&logits})) {
        std::vector<int> y(labels.begin(), labels.end());
        g.record(out, [logits, out, prob = std::move(prob), w = std::move(w), y = std::move(y),
                       weight_sum]() mutable {
            const double d = out.grad()[0] / weight_sum;
            auto dz = logits.grad();
            for (std::size_t b = 0; b < y.size(); ++b)
                for (std::size_t c = 0; c < 2; ++c) {
                    const double target = static_cast<int>(c) == y[b] ? 1.0 : 0.0;
                    dz[b * 2 + c] += d * w[b] * (prob[b * 2 + c] - target);
                }
        });
    }
    return out;
}

namespace {

// Column-centers an [m, p] row-major matrix.
std::vector<double> center_columns(std::span<const double> x, std::size_t m, std::size_t p) {
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t c = 0; c < p; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < m; ++r) mean += x[r * p + c];
        mean /= static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) out[r * p + c] -= mean;
    }
    return out;
}

// A^T B for row-major A [m, p] and B [m, q] -> [p, q].
std::vector<double> at_b(const std::vector<double>& A, const std::vector<double>& B, std::size_t m,
                         std::size_t p, std::size_t q) {
    std::vector<double> out(p * q, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t i = 0; i < p; ++i) {
            const double a = A[r * p + i];
            for (std::size_t j = 0; j < q; ++j) out[i * q + j] += a * B[r * q + j];
        }
    return out;
}

double frob2(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

// grad[r, i] += scale * sum_j X[r, j] * M[i, j]  (X [m, q], M [p, q])
void add_x_mt(std::vector<double>& grad, const std::vector<double>& X, const std::vector<double>& M,
              std::size_t m, std::size_t p, std::size_t q, double scale) {
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t i = 0; i < p; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < q; ++j) s += X[r * q + j] * M[i * q + j];
            grad[r * p + i] += scale * s;
        }
}

std::optional<Tensor> cka_impl(Graph& g, const Tensor& S, const Tensor& Y, bool throw_on_degenerate) {
    if (S.rank() != 2 || Y.rank() != 2 || S.dim(0) != Y.dim(0)) {
        throw DimensionError("linear_cka: " + shape_str(S.shape()) + " vs " + shape_str(Y.shape()) +
                             " (need the same number of rows)");
    }
    const std::size_t m = S.dim(0), p1 = S.dim(1), p2 = Y.dim(1);
    if (m < 2) throw DataError("linear_cka: need at least 2 samples, got " + std::to_string(m));

    // With centered Sc, Yc: trace(K J N J) = ||Sc^T Yc||_F^2.
    auto Sc = center_columns(S.data(), m, p1);
    auto Yc = center_columns(Y.data(), m, p2);
    auto A = at_b(Sc, Yc, m, p1, p2);
    auto Bs = at_b(Sc, Sc, m, p1, p1);
    auto By = at_b(Yc, Yc, m, p2, p2);
    const double cross = frob2(A), self_s = frob2(Bs), self_y = frob2(By);
    const double norm = static_cast<double>(m - 1) * static_cast<double>(m - 1);
    if (self_s / norm < kCkaDegenerateHsic || self_y / norm < kCkaDegenerateHsic) {
        if (throw_on_degenerate) {
            throw DegenerateInputError("linear_cka: constant activations (HSIC(K,K)=" +
                                       std::to_string(self_s / norm) + ", HSIC(N,N)=" +
                                       std::to_string(self_y / norm) + ")");
        }
        return std::nullopt;
    }
    const double denom = std::sqrt(self_s * self_y);
    auto out = Tensor::scalar(cross / denom);
    if (g.track(out, {&S, &Y})) {
        g.record(out, [S, Y, out, Sc = std::move(Sc), Yc = std::move(Yc), A = std::move(A),
                       Bs = std::move(Bs), By = std::move(By), cross, self_s, self_y, denom, m, p1,
                       p2]() mutable {
            const double d = out.grad()[0];
            // d/dSc = 2 Yc A^T / denom - 2 cross Sc Bs / (self_s denom), then center.
            auto apply = [&](const Tensor& target, const std::vector<double>& own_c,
                             const std::vector<double>& other_c, const std::vector<double>& own_gram,
                             const std::vector<double>& cross_mat, bool transposed, double self,
                             std::size_t p_own, std::size_t p_other) {
                if (!target.requires_grad()) return;
                std::vector<double> grad(m * p_own, 0.0);
                if (transposed) {
                    // cross_mat is [p_other, p_own]; need other_c * cross_mat -> [m, p_own]
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t i = 0; i < p_other; ++i) {
                            const double o = other_c[r * p_other + i];
                            for (std::size_t j = 0; j < p_own; ++j)
                                grad[r * p_own + j] += 2.0 / denom * o * cross_mat[i * p_own + j];
                        }
                } else {
                    add_x_mt(grad, other_c, cross_mat, m, p_own, p_other, 2.0 / denom);
                }
                add_x_mt(grad, own_c, own_gram, m, p_own, p_own, -2.0 * cross / (self * denom));
                auto dt = target.grad();
                for (std::size_t c = 0; c < p_own; ++c) {
                    double mean = 0.0;
                    for (std::size_t r = 0; r < m; ++r) mean += grad[r * p_own + c];
                    mean /= static_cast<double>(m);
                    for (std::size_t r = 0; r < m; ++r) dt[r * p_own + c] += d * (grad[r * p_own + c] - mean);
                }
            };
            apply(S, Sc, Yc, Bs, A, false, self_s, p1, p2);
            apply(Y, Yc, Sc, By, A, true, self_y, p2, p1);
        });
    }
    return out;
}

}  // namespace

Tensor linear_cka(Graph& g, const Tensor& S, const Tensor& Y) {
    return *cka_impl(g, S, Y, true);
}

std::optional<Tensor> try_linear_cka(Graph& g, const Tensor& S, const Tensor& Y) {
    return cka_impl(g, S, Y, false);
}

std::vector<std::size_t> sample_cka_rows(const Tensor& mask, std::size_t m_max, std::uint64_t seed,
                                         std::uint64_t step) {
    std::vector<std::size_t> rows;
    auto Mk = mask.data();
    for (std::size_t i = 0; i < Mk.size(); ++i)
        if (Mk[i] != 0.0) rows.push_back(i);
    if (rows.size() <= m_max) return rows;
    // Partial Fisher-Yates with keyed uniforms.
    for (std::size_t i = 0; i < m_max; ++i) {
        const double u = keyed_uniform(seed, step, 0xC4A, i);
        const std::size_t j = i + std::min(rows.size() - i - 1,
                                           static_cast<std::size_t>(u * static_cast<double>(rows.size() - i)));
        std::swap(rows[i], rows[j]);
    }
    rows.resize(m_max);
    std::sort(rows.begin(), rows.end());
    return rows;
}

CkaLoss cka_loss(Graph& g, std::span<const Tensor> layer_outputs, const Tensor& mask, std::size_t m_max,
                 std::uint64_t seed, std::uint64_t step) {
    const std::size_t M = layer_outputs.size();
    if (M < 2) throw ConfigError("cka_loss: need at least 2 layers, got " + std::to_string(M));
    const auto rows = sample_cka_rows(mask, m_max, seed, step);
    if (rows.size() < 2) {
        throw DataError("cka_loss: need at least 2 valid frames, got " + std::to_string(rows.size()));
    }
    std::vector<Tensor> samples;
    samples.reserve(M);
    for (const auto& layer : layer_outputs) samples.push_back(gather_rows(g, layer, rows));

    CkaLoss result;
    result.rows = rows.size();
    result.pairwise.assign(M * M, 0.0);
    for (std::size_t p = 0; p < M; ++p) result.pairwise[p * M + p] = 1.0;
    std::vector<Tensor> terms;
    for (std::size_t p = 0; p < M; ++p)
        for (std::size_t q = p + 1; q < M; ++q) {
            auto cka = try_linear_cka(g, samples[p], samples[q]);
            if (!cka) {
                ++result.skipped_pairs;
                result.pairwise[p * M + q] = result.pairwise[q * M + p] = std::nan("");
                continue;
            }
            result.pairwise[p * M + q] = result.pairwise[q * M + p] = cka->item();
            terms.push_back(*cka);
        }
    if (terms.empty()) {
        result.loss = Tensor::scalar(0.0);
        return result;
    }
    // With no skipped pairs this is exactly 2 / (M (M - 1)) times the sum.
    Tensor sum = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) sum = add(g, sum, terms[i]);
    result.loss = scale(g, sum, 1.0 / static_cast<double>(terms.size()));
    return result;
}

}  // namespace mgsd
