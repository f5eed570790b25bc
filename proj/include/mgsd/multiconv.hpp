// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "mgsd/aggregator.hpp"
#include "mgsd/config.hpp"
#include "mgsd/tensor.hpp"

namespace mgsd {

/// Parameters of one multi-kernel gated convolution block.
///
/// Depthwise kernels are [k, d'] with one filter per channel; full kernels
/// are [k, d', d'].
struct MultiConvBlockParams {
    Tensor ln_in_gamma, ln_in_beta;        // [U]
    Tensor expand, expand_bias;            // [U, d_inter], [d_inter]
    Tensor ln_split_gamma, ln_split_beta;  // [d']
    std::vector<Tensor> kernels;
    std::vector<Tensor> kernel_biases;     // [d'] each
    Tensor fusion_logits;                  // [P], used by FusionMode::Learned
    Tensor out_proj, out_bias;             // [d', U], [U]
    double dropout = 0.1;
    bool residual = true;
    FusionMode fusion = FusionMode::Mean;
    ConvMode conv = ConvMode::Depthwise;

    std::size_t d_inter() const { return expand.dim(1); }
};

/// Element-wise mean of the branch outputs.
Tensor fusion(Graph& g, std::span<const Tensor> branches);
/// softmax(logits)-weighted sum of the branch outputs.
Tensor fusion_learned(Graph& g, std::span<const Tensor> branches, const Tensor& logits);

/// E = GELU(expand(LN_in(x))); Z_l = E[:, :d']; Z_r = LN_split(E[:, d':]);
/// V_j = conv_kj(Z_r); out = dropout(out_proj(fusion(V) * Z_l)); returns
/// x + out (or out when the residual is disabled). Padded frames are zeroed
/// after every frame-wise stage and before the convolutions.
Tensor block_forward(Graph& g, const Tensor& x, const MultiConvBlockParams& params, const Tensor& mask);

struct StackOutput {
    std::vector<Tensor> per_layer;  // M tensors [B, T, U]
    Tensor concat;                  // [B, T, M*U]
};

StackOutput stack_forward(Graph& g, const AggregatedFeatures& x,
                          std::span<const MultiConvBlockParams> blocks);

}  // namespace mgsd
