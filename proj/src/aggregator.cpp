// SPDX-License-Identifier: Apache-2.0
#include "mgsd/aggregator.hpp"

#include "mgsd/errors.hpp"
#include "mgsd/ops.hpp"

namespace mgsd {

namespace {

Tensor gate_transform(Graph& g, const Tensor& x, const Tensor& w, GateMode mode) {
    return mode == GateMode::Matrix ? matmul(g, x, w) : scale_channels(g, x, w);
}

}  // namespace

AggregatedFeatures aggregate(Graph& g, const Batch& batch, const AggregatorParams& params) {
    if (params.proj.rank() != 2 || params.proj.dim(0) != batch.dim) {
        throw DimensionError("aggregate: batch feature dim " + std::to_string(batch.dim) +
                             " does not match projection " + shape_str(params.proj.shape()));
    }
    const auto mask = batch.mask_tensor();
    Tensor sum;
    for (std::size_t l = 0; l < batch.layers; ++l) {
        auto projected = add_bias(g, matmul(g, batch.layer(l), params.proj), params.proj_bias);
        projected = apply_mask(g, projected, mask);
        auto gate = sigmoid(g, gate_transform(g, projected, params.w1, params.gate));
        auto value = gate_transform(g, projected, params.w2, params.gate);
        auto gated = mul(g, gate, value);
        sum = sum.defined() ? add(g, sum, gated) : gated;
    }
    return {apply_mask(g, sum, mask), mask};
}

}  // namespace mgsd
