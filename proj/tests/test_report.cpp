// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <sstream>

#include "mgsd/errors.hpp"
#include "mgsd/report.hpp"
#include "mgsd/training.hpp"
#include "test_util.hpp"

using namespace mgsd;
using testutil::Rng;

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(cells);
    }
    return rows;
}

std::string pct(double eer, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, 100.0 * eer);
    return buf;
}

Dataset synth(const std::string& name, std::size_t n, std::uint64_t split) {
    SynthSpec s;
    s.n_utts = n;
    s.layers = 3;
    s.dim = 5;
    s.t_min = 3;
    s.t_max = 8;
    s.class_separation = 3.0;
    s.seed = 5;
    s.split = split;
    s.id_prefix = name;
    return Dataset::from(synth_generate(s, testutil::temp_dir("report_" + name), "m.jsonl"));
}

Config small_config() {
    Config c;
    c.model = testutil::tiny_model();
    c.train.lr = 1e-2;
    c.train.batch_size = 4;
    c.train.max_epochs = 2;
    return c;
}

}  // namespace

TEST(Heatmap, SingleCellEqualsPooledEer) {
    Rng rng(1);
    std::vector<ScoreRecord> r;
    for (int i = 0; i < 20; ++i)
        r.push_back({"u" + std::to_string(i), rng.normal() + (i % 2 ? 0.0 : 0.8), i % 2, {{"a", "x"}, {"b", "y"}}});
    const auto rows = parse_csv(heatmap_csv(r, "a", "b"));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"a/b", "y"}));
    EXPECT_EQ(rows[1][0], "x");
    EXPECT_EQ(rows[1][1], pct(compute_eer(r).eer, 2));
}

TEST(Heatmap, CellsMatchBruteForceSubsetEer) {
    Rng rng(2);
    const std::vector<std::string> av{"p", "q"}, bv{"s", "t"};
    std::vector<ScoreRecord> r;
    for (int i = 0; i < 80; ++i)
        r.push_back({"u" + std::to_string(i), rng.normal() + (i % 2 ? 0.0 : 1.0), i % 2,
                     {{"a", av[rng.index(0, 1)]}, {"b", bv[rng.index(0, 1)]}}});
    const auto rows = parse_csv(heatmap_csv(r, "a", "b"));
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            std::vector<double> bona, spoof;
            for (const auto& s : r)
                if (s.conditions.at("a") == av[i] && s.conditions.at("b") == bv[j])
                    (s.label == kBonafide ? bona : spoof).push_back(s.llr);
            EXPECT_EQ(rows[i + 1][j + 1], pct(oracle::eer(bona, spoof), 2));
        }
}

TEST(Heatmap, CellMissingAClassIsBlank) {
    std::vector<ScoreRecord> r{{"a", 1.0, 0, {{"a", "x"}, {"b", "y"}}},
                               {"b", 0.0, 1, {{"a", "x"}, {"b", "y"}}},
                               {"c", 0.5, 1, {{"a", "x"}, {"b", "z"}}}};
    const auto rows = parse_csv(heatmap_csv(r, "a", "b"));
    EXPECT_EQ(rows[1], (std::vector<std::string>{"x", "0.00", ""}));
    EXPECT_THROW(heatmap_csv(r, "a", "missing"), ConfigError);
}

TEST(Ablation, ParsesKernelSetsAndModes) {
    EXPECT_EQ(parse_kernel_sets("3,7;11"), (std::vector<std::vector<std::size_t>>{{3, 7}, {11}}));
    EXPECT_THROW(parse_kernel_sets("3;4"), ConfigError);
    EXPECT_EQ(parse_loss_mode("ce+cka"), LossMode::CeCka);
    EXPECT_EQ(loss_mode_name(parse_loss_mode("ce")), "ce");
    EXPECT_THROW(parse_loss_mode("mse"), ConfigError);
}

TEST(Ablation, SingleCellEqualsDirectTraining) {
    const auto tr = synth("abl_tr", 12, 0);
    const auto dev = synth("abl_dev", 8, 1);
    const auto base = small_config();
    const std::vector<std::vector<std::size_t>> sets{{3, 5}};
    const std::vector<LossMode> modes{LossMode::Ce};
    const auto cells = ablation_run(base, sets, modes, tr, dev);
    ASSERT_EQ(cells.size(), 1u);
    ASSERT_TRUE(cells[0].dev_eer.has_value()) << cells[0].error;
    auto cfg = base;
    cfg.model.kernels = {3, 5};
    cfg.train.cka = false;
    const auto direct = train(tr, dev, cfg);
    EXPECT_EQ(*cells[0].dev_eer, evaluate(direct.best_model, dev, cfg.train).eer.eer);
    EXPECT_EQ(ablation_csv(cells, sets, modes), "kernels,ce\n\"3,5\"," + pct(*cells[0].dev_eer, 4) + "\n");
}

TEST(Ablation, FailingCellIsRecordedAndOthersRun) {
    const auto tr = synth("abl_err_tr", 8, 0);
    const auto dev = synth("abl_err_dev", 8, 1);
    auto base = small_config();
    base.train.max_epochs = 1;
    // An even kernel size fails validation for that row only.
    const std::vector<std::vector<std::size_t>> sets{{3}, {4}};
    const std::vector<LossMode> modes{LossMode::Ce, LossMode::CeCka};
    const auto cells = ablation_run(base, sets, modes, tr, dev);
    ASSERT_EQ(cells.size(), 4u);
    EXPECT_TRUE(cells[0].dev_eer.has_value()) << cells[0].error;
    EXPECT_TRUE(cells[1].dev_eer.has_value()) << cells[1].error;
    EXPECT_FALSE(cells[2].dev_eer.has_value());
    EXPECT_NE(cells[2].error.find("even"), std::string::npos);
    const auto rows = parse_csv(ablation_csv(cells, sets, modes));
    EXPECT_EQ(rows[0], (std::vector<std::string>{"kernels", "ce", "ce+cka"}));
    EXPECT_EQ(rows[2][1], "ERROR");
    EXPECT_EQ(rows[2][2], "ERROR");
    EXPECT_NE(rows[1][2], "ERROR");
}
