// SPDX-License-Identifier: Apache-2.0
#include "mgsd/multiconv.hpp"

#include "mgsd/errors.hpp"
#include "mgsd/ops.hpp"

namespace mgsd {

Tensor fusion(Graph& g, std::span<const Tensor> branches) {
    if (branches.empty()) throw ConfigError("fusion: at least one branch is required");
    return mean_of(g, branches);
}

Tensor fusion_learned(Graph& g, std::span<const Tensor> branches, const Tensor& logits) {
    if (branches.empty()) throw ConfigError("fusion: at least one branch is required");
    const auto ones = Tensor::full(logits.shape(), 1.0);
    return weighted_sum(g, branches, softmax_masked(g, logits, ones, 0));
}

Tensor block_forward(Graph& g, const Tensor& x, const MultiConvBlockParams& params, const Tensor& mask) {
    const std::size_t d_inter = params.d_inter();
    if (d_inter % 2 != 0) {
        throw ConfigError("block_forward: d_inter must be even, got " + std::to_string(d_inter));
    }
    if (params.kernels.empty() || params.kernels.size() != params.kernel_biases.size()) {
        throw ConfigError("block_forward: need one bias per convolution kernel and at least one kernel");
    }
    const std::size_t half = d_inter / 2;

    auto h = layer_norm(g, x, params.ln_in_gamma, params.ln_in_beta);
    h = gelu(g, add_bias(g, matmul(g, h, params.expand), params.expand_bias));
    h = apply_mask(g, h, mask);

    auto z_left = slice_last(g, h, 0, half);
    auto z_right = layer_norm(g, slice_last(g, h, half, d_inter), params.ln_split_gamma,
                              params.ln_split_beta);
    z_right = apply_mask(g, z_right, mask);

    std::vector<Tensor> branches;
    branches.reserve(params.kernels.size());
    for (std::size_t j = 0; j < params.kernels.size(); ++j) {
        branches.push_back(params.conv == ConvMode::Depthwise
                               ? conv1d_depthwise(g, z_right, params.kernels[j], params.kernel_biases[j])
                               : conv1d_full(g, z_right, params.kernels[j], params.kernel_biases[j]));
    }
    auto fused = params.fusion == FusionMode::Mean
                     ? fusion(g, branches)
                     : fusion_learned(g, branches, params.fusion_logits);
    fused = apply_mask(g, fused, mask);

    auto out = add_bias(g, matmul(g, mul(g, fused, z_left), params.out_proj), params.out_bias);
    out = apply_mask(g, dropout(g, out, params.dropout), mask);
    return params.residual ? add(g, x, out) : out;
}

StackOutput stack_forward(Graph& g, const AggregatedFeatures& x,
                          std::span<const MultiConvBlockParams> blocks) {
    if (blocks.empty()) throw ConfigError("stack_forward: at least one block is required");
    StackOutput result;
    Tensor current = x.values;
    for (const auto& block : blocks) {
        current = block_forward(g, current, block, x.mask);
        result.per_layer.push_back(current);
    }
    result.concat = concat_last(g, result.per_layer);
    return result;
}

}  // namespace mgsd
