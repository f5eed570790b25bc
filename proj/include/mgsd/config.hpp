// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mgsd {

enum class GateMode { Matrix, Vector };
enum class ConvMode { Depthwise, Full };
enum class FusionMode { Mean, Learned };
enum class PoolMode { Stats, Literal };
enum class DecayMode { Decoupled, Coupled };

/// Architecture hyperparameters. Defaults are the reference-scale model.
struct ModelConfig {
    std::size_t layers = 25;      // L: SSL hidden states incl. the feature projection
    std::size_t feat_dim = 1024;  // D
    std::size_t agg_dim = 128;    // U
    GateMode gate = GateMode::Matrix;
    std::size_t blocks = 4;  // M
    std::vector<std::size_t> kernels{3, 7, 11, 15};
    std::size_t d_inter = 512;
    double dropout = 0.1;
    bool residual = true;
    FusionMode fusion = FusionMode::Mean;
    ConvMode conv = ConvMode::Depthwise;
    std::size_t heads = 4;
    PoolMode pool = PoolMode::Stats;
    std::size_t head_hidden = 0;

    std::size_t concat_dim() const { return blocks * agg_dim; }
    /// Throws ConfigError on any inconsistent value.
    void validate() const;
};

struct TrainConfig {
    double lr = 3e-6;
    double weight_decay = 1e-4;
    DecayMode decay = DecayMode::Decoupled;
    std::size_t batch_size = 5;
    double weight_bonafide = 0.9;
    double weight_spoof = 0.1;
    std::size_t patience = 3;
    std::size_t max_epochs = 100;
    std::uint64_t seed = 7;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool cka = true;
    std::size_t m_max = 256;
    double clip_norm = 0.0;  // 0 disables global-norm clipping

    void validate() const;
};

struct Config {
    ModelConfig model;
    TrainConfig train;
};

/// Every recognised key, in canonical order.
const std::vector<std::string>& config_keys();

/// Parses "key = value" lines; '#' starts a comment. Unknown keys are errors.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

void set_config_value(Config& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const Config& cfg, const std::string& key);

/// Canonical text form; parse_config(to_text(c)) reproduces c exactly.
std::string to_text(const Config& cfg);

std::vector<std::size_t> parse_kernel_list(const std::string& text);
std::string format_kernel_list(const std::vector<std::size_t>& kernels);

}  // namespace mgsd
