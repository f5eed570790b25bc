// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "mgsd/config.hpp"
#include "mgsd/feature_store.hpp"
#include "mgsd/tensor.hpp"

namespace mgsd {

/// Shared D->U projection followed by per-layer SwiGLU gating.
/// Matrix gate: w1, w2 are [U, U]. Vector gate: w1, w2 are [U] and act
/// element-wise (a diagonal gate).
struct AggregatorParams {
    Tensor proj;       // [D, U]
    Tensor proj_bias;  // [U]
    Tensor w1;
    Tensor w2;
    GateMode gate = GateMode::Matrix;
};

struct AggregatedFeatures {
    Tensor values;  // [B, T, U], zero at padded frames
    Tensor mask;    // [B, T]
};

/// P_l = proj(H_l); G_l = sigmoid(P_l W1) * (P_l W2); out = sum_l G_l, masked.
AggregatedFeatures aggregate(Graph& g, const Batch& batch, const AggregatorParams& params);

}  // namespace mgsd
