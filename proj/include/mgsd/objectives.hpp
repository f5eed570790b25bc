// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mgsd/tensor.hpp"

namespace mgsd {

/// HSIC(K, K) below this counts as a constant activation matrix.
inline constexpr double kCkaDegenerateHsic = 1e-12;

struct ClassWeights {
    double bonafide = 0.9;
    double spoof = 0.1;
};

/// Class-weighted cross-entropy on [B, 2] logits, normalized by the sum of
/// the weights actually applied. Returns a scalar tensor.
Tensor weighted_ce(Graph& g, const Tensor& logits, std::span<const int> labels, ClassWeights weights);

/// Linear CKA between S [m, p1] and Y [m, p2] with rows as samples.
/// Throws DegenerateInputError when either side has HSIC(K, K) < 1e-12.
Tensor linear_cka(Graph& g, const Tensor& S, const Tensor& Y);

/// As linear_cka but returns nullopt instead of throwing on degenerate input.
std::optional<Tensor> try_linear_cka(Graph& g, const Tensor& S, const Tensor& Y);

/// Chooses which valid (batch, frame) rows feed the CKA loss: every valid
/// row in row-major order, or a uniformly drawn m_max-subset (sorted) when
/// there are more. Draws are keyed on (seed, step).
std::vector<std::size_t> sample_cka_rows(const Tensor& mask, std::size_t m_max, std::uint64_t seed,
                                         std::uint64_t step);

struct CkaLoss {
    Tensor loss;                  // scalar; mean CKA over strict pairs p < q
    std::vector<double> pairwise; // M x M, diagonal 1
    std::size_t skipped_pairs = 0;
    std::size_t rows = 0;
};

/// Mean linear CKA over all strict pairs of block outputs [B, T, U], using the
/// same sampled rows for every block. Degenerate pairs are skipped and counted.
CkaLoss cka_loss(Graph& g, std::span<const Tensor> layer_outputs, const Tensor& mask, std::size_t m_max,
                 std::uint64_t seed, std::uint64_t step);

struct LossBreakdown {
    double ce = 0.0;
    double cka = 0.0;
    double total = 0.0;
    std::vector<double> pairwise_cka;
};

}  // namespace mgsd
