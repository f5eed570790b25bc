// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgsd/config.hpp"
#include "mgsd/metrics.hpp"
#include "mgsd/training.hpp"

namespace mgsd {

/// Grid of EER% with one row per `row_key` value and one column per
/// `col_key` value. Cells missing a class are left blank.
std::string heatmap_csv(std::span<const ScoreRecord> records, const std::string& row_key,
                        const std::string& col_key);

enum class LossMode { Ce, CeCka };

LossMode parse_loss_mode(const std::string& name);
std::string loss_mode_name(LossMode mode);

struct AblationCell {
    std::vector<std::size_t> kernels;
    LossMode mode = LossMode::CeCka;
    std::optional<double> dev_eer;  // empty on failure
    std::string error;
};

/// Trains and evaluates one model per (kernel set, loss mode) with the same
/// seed and data. A failing cell is recorded and the run continues.
std::vector<AblationCell> ablation_run(const Config& base, std::span<const std::vector<std::size_t>> kernel_sets,
                                       std::span<const LossMode> modes, const Dataset& train_set,
                                       const Dataset& dev_set);

/// "kernels,ce,ce+cka" header; dev EER% with four decimals or ERROR.
std::string ablation_csv(std::span<const AblationCell> cells, std::span<const std::vector<std::size_t>> kernel_sets,
                         std::span<const LossMode> modes);

/// Parses "3,7;11,15" into kernel sets.
std::vector<std::vector<std::size_t>> parse_kernel_sets(const std::string& text);

}  // namespace mgsd
