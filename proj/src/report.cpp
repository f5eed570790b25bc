// SPDX-License-Identifier: Apache-2.0
#include "mgsd/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "mgsd/errors.hpp"

namespace mgsd {

namespace {

std::string percent(double eer, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, 100.0 * eer);
    return buf;
}

// Quotes a CSV field when it contains a separator, quote or newline.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string heatmap_csv(std::span<const ScoreRecord> records, const std::string& row_key,
                        const std::string& col_key) {
    const std::vector<std::string> axes{row_key, col_key};
    const auto cells = condition_breakdown(records, axes);
    std::set<std::string> rows, cols;
    std::map<std::pair<std::string, std::string>, std::optional<double>> grid;
    for (const auto& c : cells) {
        rows.insert(c.key[0]);
        cols.insert(c.key[1]);
        grid[{c.key[0], c.key[1]}] = c.eer;
    }
    std::ostringstream os;
    os << csv_field(row_key + "/" + col_key);
    for (const auto& c : cols) os << ',' << csv_field(c);
    os << '\n';
    for (const auto& r : rows) {
        os << csv_field(r);
        for (const auto& c : cols) {
            os << ',';
            const auto it = grid.find({r, c});
            if (it != grid.end() && it->second) os << percent(*it->second, 2);
        }
        os << '\n';
    }
    return os.str();
}

LossMode parse_loss_mode(const std::string& name) {
    if (name == "ce") return LossMode::Ce;
    if (name == "ce+cka") return LossMode::CeCka;
    throw ConfigError("unknown loss mode '" + name + "' (expected ce or ce+cka)");
}

std::string loss_mode_name(LossMode mode) {
    return mode == LossMode::Ce ? "ce" : "ce+cka";
}

std::vector<AblationCell> ablation_run(const Config& base, std::span<const std::vector<std::size_t>> kernel_sets,
                                       std::span<const LossMode> modes, const Dataset& train_set,
                                       const Dataset& dev_set) {
    std::vector<AblationCell> cells;
    for (const auto& kernels : kernel_sets)
        for (const auto mode : modes) {
            AblationCell cell;
            cell.kernels = kernels;
            cell.mode = mode;
            try {
                Config cfg = base;
                cfg.model.kernels = kernels;
                cfg.train.cka = mode == LossMode::CeCka;
                const auto result = train(train_set, dev_set, cfg);
                cell.dev_eer = evaluate(result.best_model, dev_set, cfg.train).eer.eer;
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }
    return cells;
}

std::string ablation_csv(std::span<const AblationCell> cells, std::span<const std::vector<std::size_t>> kernel_sets,
                         std::span<const LossMode> modes) {
    std::ostringstream os;
    os << "kernels";
    for (const auto m : modes) os << ',' << loss_mode_name(m);
    os << '\n';
    for (const auto& kernels : kernel_sets) {
        os << csv_field(format_kernel_list(kernels));
        for (const auto m : modes) {
            os << ',';
            const auto it = std::find_if(cells.begin(), cells.end(), [&](const AblationCell& c) {
                return c.kernels == kernels && c.mode == m;
            });
            if (it == cells.end()) continue;
            os << (it->dev_eer ? percent(*it->dev_eer, 4) : std::string("ERROR"));
        }
        os << '\n';
    }
    return os.str();
}

std::vector<std::vector<std::size_t>> parse_kernel_sets(const std::string& text) {
    std::vector<std::vector<std::size_t>> sets;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) {
        if (item.find_first_not_of(" \t") == std::string::npos) continue;
        sets.push_back(parse_kernel_list(item));
    }
    if (sets.empty()) throw ConfigError("no kernel sets given");
    return sets;
}

}  // namespace mgsd
