// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgsd/aggregator.hpp"
#include "mgsd/config.hpp"
#include "mgsd/feature_store.hpp"
#include "mgsd/multiconv.hpp"
#include "mgsd/pooling.hpp"

namespace mgsd {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct ModelOutput {
    Tensor logits;  // [B, 2]
    StackOutput stack;
    Tensor mask;
};

/// Aggregator -> MultiConv stack -> attentive pooling -> head.
class Model {
public:
    Model() = default;

    /// Weight matrices uniform in +-sqrt(6 / (fan_in + fan_out)); biases and
    /// LayerNorm betas zero; LayerNorm gammas one. Deterministic in `seed`.
    static Model init(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }

    ModelOutput forward(Graph& g, const Batch& batch) const;

    /// Canonical order; names are stable across runs and used by checkpoints.
    std::vector<NamedTensor> named_parameters() const;
    std::vector<Tensor> parameters() const;

    /// Deep copy with independent storage.
    Model clone() const;

    /// Copies values by name; throws DataError on a missing name or shape mismatch.
    void load_values(const std::vector<NamedTensor>& values);

    AggregatorParams aggregator;
    std::vector<MultiConvBlockParams> blocks;
    MHAPParams pool;
    HeadParams head;

private:
    ModelConfig cfg_;
};

}  // namespace mgsd
