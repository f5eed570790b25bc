// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgsd/config.hpp"
#include "mgsd/model.hpp"

namespace mgsd {

inline constexpr char kCheckpointMagic[4] = {'M', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Model snapshot plus the state needed to resume or audit a run.
/// Binary layout is described in docs/checkpoint_format.md.
struct Checkpoint {
    Config config;
    std::uint64_t epoch = 0;
    double dev_eer = 1.0;
    std::string rng_state;  // textual std::mt19937_64 state
    std::vector<NamedTensor> params;
};

Checkpoint make_checkpoint(const Model& model, const Config& config, std::uint64_t epoch, double dev_eer,
                           std::string rng_state);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mgsd
