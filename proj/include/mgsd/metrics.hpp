// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgsd/feature_store.hpp"
#include "mgsd/tensor.hpp"

namespace mgsd {

/// One scored trial. Higher llr means more bona fide.
struct ScoreRecord {
    std::string utt_id;
    double llr = 0.0;
    int label = kBonafide;
    std::map<std::string, std::string> conditions;
};

/// log p(x|bona fide) - log p(x|spoof) per row of [B, 2] logits, which is
/// logits[b, 0] - logits[b, 1].
std::vector<double> llr(const Tensor& logits);

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

/// Equal error rate over a threshold sweep.
///
/// Candidate thresholds are the sorted unique scores. At threshold tau,
/// P_fa = #(spoof > tau) / #spoof and P_miss = #(bona fide <= tau) / #bona.
/// The sweep starts from the operating point (P_miss, P_fa) = (0, 1) below
/// every score. The EER is P_miss at the first threshold where
/// P_miss == P_fa; otherwise both rates are interpolated linearly between
/// the two operating points that bracket the crossing.
EerResult compute_eer(std::span<const double> bonafide, std::span<const double> spoof);
EerResult compute_eer(std::span<const ScoreRecord> records);

struct BreakdownCell {
    std::vector<std::string> key;  // one value per axis
    std::size_t n_bonafide = 0;
    std::size_t n_spoof = 0;
    std::optional<double> eer;     // empty when a class is missing
};

/// Groups records by the values of `axes` (sorted by key) and computes an EER
/// per cell. Throws ConfigError if a record lacks one of the axes.
std::vector<BreakdownCell> condition_breakdown(std::span<const ScoreRecord> records,
                                               std::span<const std::string> axes);

/// "utt_id<TAB>llr" per line, llr at full double precision.
void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records);
std::vector<std::pair<std::string, double>> read_scores(const std::filesystem::path& path);

/// Joins raw scores with manifest labels and conditions; throws DataError on
/// an unknown utt_id.
std::vector<ScoreRecord> attach_labels(std::span<const std::pair<std::string, double>> scores,
                                       const Manifest& manifest);

}  // namespace mgsd
