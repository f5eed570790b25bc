// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mgsd/tensor.hpp"

namespace mgsd {

/// Per-utterance SSL hidden states, layer-major [L][T][D].
struct HiddenStack {
    std::string utt_id;
    std::uint32_t layers = 0;
    std::uint32_t frames = 0;
    std::uint32_t dim = 0;
    std::vector<float> values;

    float at(std::size_t l, std::size_t t, std::size_t d) const {
        return values[(l * frames + t) * dim + d];
    }
};

inline constexpr char kFeatureMagic[4] = {'M', 'G', 'S', 'D'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

/// Writes the little-endian feature file: magic | version | L | T | D | f32 payload.
void write_features(const HiddenStack& stack, const std::filesystem::path& path);
/// Throws ParseError (bad magic, version, truncation, NaN/Inf) without
/// returning partial data.
HiddenStack read_features(const std::filesystem::path& path, const std::string& utt_id = {});

/// Class index used by the classifier head: 0 = bona fide, 1 = spoof.
enum Label : int { kBonafide = 0, kSpoof = 1 };

std::string label_name(int label);
int parse_label(const std::string& name);

struct ManifestRow {
    std::string utt_id;
    std::string path;  // relative to the manifest's directory
    int label = kBonafide;
    std::map<std::string, std::string> conditions;
};

/// JSON Lines dataset index.
struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestRow> rows;

    std::filesystem::path resolve(const ManifestRow& row) const { return base_dir / row.path; }
    const ManifestRow* find(const std::string& utt_id) const;
};

/// Validates unique ids, label values and that every path exists.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Loads every feature file listed in the manifest, checking that all share L and D.
std::vector<HiddenStack> load_all(const Manifest& manifest);

struct SynthSpec {
    std::size_t n_utts = 0;
    std::uint32_t layers = 4;
    std::uint32_t dim = 16;
    std::uint32_t t_min = 20;
    std::uint32_t t_max = 40;
    double class_separation = 6.0;
    std::uint64_t seed = 7;
    /// Selects an independent sample stream over the same class geometry,
    /// so train and dev splits share the task but not the draws.
    std::uint64_t split = 0;
    std::string id_prefix = "utt";
};

/// Writes one feature file per utterance plus `manifest_name` into out_dir.
///
/// Every frame of layer l is N(base_l + s * (sep/2) * dir_l, I) with s = +1
/// for bona fide and -1 for spoof; base_l and the unit vectors dir_l come from
/// `seed` alone. Labels follow the pattern bona, bona, spoof, spoof, ... and
/// the "synth" condition alternates synthA/synthB, so both conditions hold
/// both classes.
Manifest synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir,
                        const std::string& manifest_name);

/// Zero-padded batch, features [B][L][T_max][D], mask [B][T_max].
struct Batch {
    std::size_t batch = 0;
    std::size_t layers = 0;
    std::size_t max_frames = 0;
    std::size_t dim = 0;
    std::vector<double> features;
    std::vector<double> mask;
    std::vector<int> labels;
    std::vector<std::string> utt_ids;
    std::vector<std::size_t> lengths;

    /// [B, T_max] constant tensor.
    Tensor mask_tensor() const;
    /// Layer l as a constant [B, T_max, D] tensor.
    Tensor layer(std::size_t l) const;
};

Batch make_batch(std::span<const HiddenStack> stacks, std::span<const int> labels);

/// Recovers utterance b from a batch by trimming its padding.
HiddenStack unbatch(const Batch& batch, std::size_t b);

}  // namespace mgsd
