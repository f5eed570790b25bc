// SPDX-License-Identifier: Apache-2.0
#include "mgsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "mgsd/errors.hpp"

namespace mgsd {

std::vector<double> llr(const Tensor& logits) {
    if (logits.rank() != 2 || logits.dim(1) != 2) {
        throw DimensionError("llr: expected [B, 2] logits, got " + shape_str(logits.shape()));
    }
    std::vector<double> out(logits.dim(0));
    auto Z = logits.data();
    for (std::size_t b = 0; b < out.size(); ++b) out[b] = Z[b * 2] - Z[b * 2 + 1];
    return out;
}

EerResult compute_eer(std::span<const double> bonafide, std::span<const double> spoof) {
    if (bonafide.empty() || spoof.empty()) {
        throw DataError("compute_eer: need at least one bona fide and one spoof score (got " +
                        std::to_string(bonafide.size()) + " and " + std::to_string(spoof.size()) + ")");
    }
    std::vector<double> bona(bonafide.begin(), bonafide.end());
    std::vector<double> spf(spoof.begin(), spoof.end());
    for (double v : bona)
        if (!std::isfinite(v)) throw DataError("compute_eer: non-finite score");
    for (double v : spf)
        if (!std::isfinite(v)) throw DataError("compute_eer: non-finite score");
    std::sort(bona.begin(), bona.end());
    std::sort(spf.begin(), spf.end());

    std::vector<double> thresholds;
    thresholds.reserve(bona.size() + spf.size());
    std::merge(bona.begin(), bona.end(), spf.begin(), spf.end(), std::back_inserter(thresholds));
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const auto nb = static_cast<double>(bona.size());
    const auto ns = static_cast<double>(spf.size());
    double prev_miss = 0.0, prev_fa = 1.0;
    double prev_tau = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, si = 0;
    for (double tau : thresholds) {
        while (bi < bona.size() && bona[bi] <= tau) ++bi;
        while (si < spf.size() && spf[si] <= tau) ++si;
        const double miss = static_cast<double>(bi) / nb;
        const double fa = static_cast<double>(spf.size() - si) / ns;
        if (miss == fa) return {miss, tau};
        if (miss > fa) {
            const double d_prev = prev_fa - prev_miss;
            const double d_cur = fa - miss;
            const double alpha = d_prev / (d_prev - d_cur);
            const double eer = prev_miss + alpha * (miss - prev_miss);
            const double thr = std::isinf(prev_tau) ? tau : prev_tau + alpha * (tau - prev_tau);
            return {eer, thr};
        }
        prev_miss = miss;
        prev_fa = fa;
        prev_tau = tau;
    }
    // Unreachable: at the largest threshold miss = 1 and fa = 0.
    return {prev_miss, prev_tau};
}

EerResult compute_eer(std::span<const ScoreRecord> records) {
    std::vector<double> bona, spoof;
    for (const auto& r : records) {
        if (r.label == kBonafide) bona.push_back(r.llr);
        else if (r.label == kSpoof) spoof.push_back(r.llr);
        else throw DataError("compute_eer: record '" + r.utt_id + "' has an invalid label");
    }
    return compute_eer(bona, spoof);
}

std::vector<BreakdownCell> condition_breakdown(std::span<const ScoreRecord> records,
                                               std::span<const std::string> axes) {
    std::map<std::vector<std::string>, std::vector<ScoreRecord>> groups;
    for (const auto& r : records) {
        std::vector<std::string> key;
        for (const auto& axis : axes) {
            const auto it = r.conditions.find(axis);
            if (it == r.conditions.end()) {
                throw ConfigError("condition_breakdown: record '" + r.utt_id + "' has no tag '" + axis + "'");
            }
            key.push_back(it->second);
        }
        groups[key].push_back(r);
    }
    std::vector<BreakdownCell> cells;
    for (const auto& [key, group] : groups) {
        BreakdownCell cell;
        cell.key = key;
        for (const auto& r : group) (r.label == kBonafide ? cell.n_bonafide : cell.n_spoof)++;
        if (cell.n_bonafide > 0 && cell.n_spoof > 0) cell.eer = compute_eer(group).eer;
        cells.push_back(std::move(cell));
    }
    return cells;
}

void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write scores to " + path.string());
    char buf[64];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%.17g", r.llr);
        os << r.utt_id << '\t' << buf << '\n';
    }
}

std::vector<std::pair<std::string, double>> read_scores(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open scores " + path.string());
    std::vector<std::pair<std::string, double>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'utt_id<TAB>llr'");
        }
        try {
            out.emplace_back(line.substr(0, tab), std::stod(line.substr(tab + 1)));
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad score value");
        }
    }
    return out;
}

std::vector<ScoreRecord> attach_labels(std::span<const std::pair<std::string, double>> scores,
                                       const Manifest& manifest) {
    std::unordered_map<std::string, const ManifestRow*> index;
    for (const auto& row : manifest.rows) index[row.utt_id] = &row;
    std::vector<ScoreRecord> out;
    out.reserve(scores.size());
    for (const auto& [id, value] : scores) {
        const auto it = index.find(id);
        if (it == index.end()) throw DataError("score for '" + id + "' has no manifest row");
        out.push_back({id, value, it->second->label, it->second->conditions});
    }
    return out;
}

}  // namespace mgsd
