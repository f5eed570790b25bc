// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mgsd/tensor.hpp"

// Differentiable primitives. Every op evaluates eagerly and, when the graph
// is recording and an input requires a gradient, appends its backward rule.
// Frame-wise ops treat all leading axes as rows and the last axis as channels.
namespace mgsd {

inline constexpr double kLayerNormEps = 1e-5;

/// a[..., m, n] x b[n, p] -> [..., m, p]
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double factor);

/// x[..., C] + bias[C]
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);
/// x[..., C] * w[C]
Tensor scale_channels(Graph& g, const Tensor& x, const Tensor& w);

Tensor sigmoid(Graph& g, const Tensor& x);
/// Exact erf form: 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(Graph& g, const Tensor& x);

/// Normalizes every row over the last axis, then applies gamma/beta.
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

/// One filter per channel with zero 'same' padding.
/// x: [T, C] or [B, T, C]; kernel: [k, C]; bias: [C]; k must be odd.
Tensor conv1d_depthwise(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Dense 1-D convolution, zero 'same' padding.
/// x: [T, Cin] or [B, T, Cin]; kernel: [k, Cin, Cout]; bias: [Cout].
Tensor conv1d_full(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Multiplies each frame by its mask value. mask has x's shape minus the
/// channel axis and holds 0/1.
Tensor apply_mask(Graph& g, const Tensor& x, const Tensor& mask);

/// Softmax along `axis`; positions with mask == 0 are treated as -inf and
/// come out exactly 0. mask has x's shape.
Tensor softmax_masked(Graph& g, const Tensor& x, const Tensor& mask, std::size_t axis);

/// Inverted dropout keyed on (graph seed, graph step, op sequence number).
/// Identity when the graph is not in training mode or p == 0.
Tensor dropout(Graph& g, const Tensor& x, double p);

/// x[..., begin:end]
Tensor slice_last(Graph& g, const Tensor& x, std::size_t begin, std::size_t end);
/// Concatenates along the last axis; leading axes must agree.
Tensor concat_last(Graph& g, std::span<const Tensor> parts);

/// Element-wise arithmetic mean of equally shaped tensors.
Tensor mean_of(Graph& g, std::span<const Tensor> parts);
/// sum_j weights[j] * parts[j]; weights has shape [P].
Tensor weighted_sum(Graph& g, std::span<const Tensor> parts, const Tensor& weights);

/// Picks rows of x viewed as [N, C] (C = last axis) -> [rows.size(), C].
Tensor gather_rows(Graph& g, const Tensor& x, std::span<const std::size_t> rows);

Tensor sum_all(Graph& g, const Tensor& x);

/// Counter-based hash used for keyed randomness.
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);
double keyed_uniform(std::uint64_t seed, std::uint64_t step, std::uint64_t key, std::uint64_t index);

}  // namespace mgsd
