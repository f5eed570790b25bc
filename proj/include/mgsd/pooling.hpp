// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "mgsd/tensor.hpp"

namespace mgsd {

inline constexpr double kPoolStdEps = 1e-6;

/// One learnable query u_j per head, stored as rows of a [k, Q/k] tensor.
struct MHAPParams {
    Tensor u;
    double eps_std = kPoolStdEps;

    std::size_t heads() const { return u.dim(0); }
};

/// Affine 2Q->2 head, or 2Q->n->2 with GELU when `hidden_w` is set.
struct HeadParams {
    Tensor hidden_w, hidden_b;
    Tensor w, b;
};

/// Multi-head attentive statistics pooling.
///
/// G: [B, T, Q], mask: [B, T]. Head j sees columns [j*Q/k, (j+1)*Q/k) and
/// attends over valid frames with a_t = softmax_t(<G_tj, u_j>). Returns
/// [B, 2Q] laid out as (c_1..c_k, s_1..s_k) where c_j is the attentive mean
/// and s_j = sqrt(attentive variance + eps_std).
Tensor mhap(Graph& g, const Tensor& G, const Tensor& mask, const MHAPParams& params);

/// Mean and standard deviation over the components of each row:
/// x [B, N] -> [B, 2] with std = sqrt(population variance + eps).
Tensor component_stats(Graph& g, const Tensor& x, double eps = kPoolStdEps);

/// Logits [B, 2]; column 0 = bona fide, column 1 = spoof.
Tensor classify(Graph& g, const Tensor& pooled, const HeadParams& params);

}  // namespace mgsd
