// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mgsd/checkpoint.hpp"
#include "mgsd/config.hpp"
#include "mgsd/errors.hpp"
#include "mgsd/feature_store.hpp"
#include "mgsd/metrics.hpp"
#include "mgsd/report.hpp"
#include "mgsd/training.hpp"

namespace fs = std::filesystem;
using namespace mgsd;

namespace {

// Config file plus per-key flag overrides (--train.lr 1e-3) and --set k=v.
struct ConfigArgs {
    std::string path;
    std::map<std::string, std::string> flags;
    std::vector<std::string> sets;

    void attach(CLI::App* app) {
        app->add_option("--config", path, "config file (key = value lines)");
        app->add_option("--set", sets, "override a config key, key=value (repeatable)");
        for (const auto& key : config_keys()) {
            app->add_option("--" + key, flags[key], "override " + key)->group("Config overrides")
                ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
    }

    Config resolve() const {
        Config cfg = path.empty() ? Config{} : load_config(path);
        for (const auto& key : config_keys()) {
            const auto it = flags.find(key);
            if (it != flags.end() && !it->second.empty()) set_config_value(cfg, key, it->second);
        }
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        cfg.model.validate();
        cfg.train.validate();
        return cfg;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << text;
}

std::string pct(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", 100.0 * v);
    return buf;
}

int run(int argc, char** argv) {
    CLI::App app{"Multi-layer SSL feature aggregation with MultiConv and CKA regularisation"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "write a synthetic two-class feature corpus");
    SynthSpec spec;
    std::string synth_out;
    std::size_t n_dev = 0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n", spec.n_utts, "training utterances")->required();
    synth->add_option("--n-dev", n_dev, "dev utterances (dev.jsonl, independent draws)");
    synth->add_option("--L", spec.layers, "hidden states per utterance")->capture_default_str();
    synth->add_option("--D", spec.dim, "feature dimension")->capture_default_str();
    synth->add_option("--sep", spec.class_separation, "class mean separation")->capture_default_str();
    synth->add_option("--seed", spec.seed)->capture_default_str();
    synth->add_option("--tmin", spec.t_min, "shortest utterance in frames")->capture_default_str();
    synth->add_option("--tmax", spec.t_max, "longest utterance in frames")->capture_default_str();
    synth->callback([&] {
        spec.split = 0;
        spec.id_prefix = "train";
        const auto train_manifest = synth_generate(spec, synth_out, "train.jsonl");
        std::cout << "wrote " << train_manifest.rows.size() << " utterances to "
                  << (fs::path(synth_out) / "train.jsonl").string() << "\n";
        if (n_dev > 0) {
            SynthSpec dev = spec;
            dev.n_utts = n_dev;
            dev.split = 1;
            dev.id_prefix = "dev";
            const auto dev_manifest = synth_generate(dev, synth_out, "dev.jsonl");
            std::cout << "wrote " << dev_manifest.rows.size() << " utterances to "
                      << (fs::path(synth_out) / "dev.jsonl").string() << "\n";
        }
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "train with early stopping on dev EER");
    ConfigArgs train_cfg;
    train_cfg.attach(train_cmd);
    std::string train_manifest, dev_manifest, train_out;
    train_cmd->add_option("--train", train_manifest, "training manifest")->required();
    train_cmd->add_option("--dev", dev_manifest, "dev manifest")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->callback([&] {
        const auto cfg = train_cfg.resolve();
        const auto train_set = Dataset::load(train_manifest);
        const auto dev_set = Dataset::load(dev_manifest);
        const auto result = train_run(train_set, dev_set, cfg, train_out, [](const std::string& line) {
            if (line.rfind("epoch=", 0) == 0 || line.rfind("early_stop", 0) == 0) std::cout << line << '\n';
        });
        std::cout << "best epoch " << result.best.epoch << ", dev EER " << pct(result.best.dev_eer) << "%\n";
    });

    // score
    auto* score_cmd = app.add_subcommand("score", "score a manifest with a checkpoint");
    std::string ckpt_path, score_manifest, score_out;
    score_cmd->add_option("--ckpt", ckpt_path)->required();
    score_cmd->add_option("--manifest", score_manifest)->required();
    score_cmd->add_option("--out", score_out, "score file (utt_id<TAB>llr)")->required();
    score_cmd->callback([&] {
        const auto ckpt = load_checkpoint(ckpt_path);
        const auto data = Dataset::load(score_manifest);
        const auto result = evaluate(ckpt, data);
        if (fs::path(score_out).has_parent_path()) fs::create_directories(fs::path(score_out).parent_path());
        write_scores(score_out, result.scores);
        std::cout << "scored " << result.scores.size() << " utterances, EER " << pct(result.eer.eer) << "%\n";
    });

    // eval-eer
    auto* eer_cmd = app.add_subcommand("eval-eer", "EER of a score file, optionally per condition");
    std::string eer_scores, eer_manifest;
    std::vector<std::string> by;
    eer_cmd->add_option("--scores", eer_scores)->required();
    eer_cmd->add_option("--manifest", eer_manifest)->required();
    eer_cmd->add_option("--by", by, "condition key(s) to break down by");
    eer_cmd->callback([&] {
        const auto manifest = read_manifest(eer_manifest);
        const auto records = attach_labels(read_scores(eer_scores), manifest);
        const auto pooled = compute_eer(records);
        std::cout << "pooled EER " << pct(pooled.eer) << "% at threshold " << pooled.threshold << "\n";
        if (by.empty()) return;
        const auto cells = condition_breakdown(records, by);
        for (std::size_t i = 0; i < by.size(); ++i) std::cout << (i ? "," : "") << by[i];
        std::cout << ",n_bonafide,n_spoof,eer_percent\n";
        for (const auto& c : cells) {
            for (std::size_t i = 0; i < c.key.size(); ++i) std::cout << (i ? "," : "") << c.key[i];
            char buf[64];
            if (c.eer) std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *c.eer);
            std::cout << ',' << c.n_bonafide << ',' << c.n_spoof << ',' << (c.eer ? buf : "") << '\n';
        }
    });

    // grad-check
    auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of the full training graph");
    ConfigArgs gc_cfg;
    gc_cfg.attach(gc_cmd);
    std::size_t gc_batch = 2, gc_frames = 7;
    std::uint64_t gc_seed = 1;
    double gc_tol = 1e-4;
    gc_cmd->add_option("--batch", gc_batch)->capture_default_str();
    gc_cmd->add_option("--frames", gc_frames, "longest utterance")->capture_default_str();
    gc_cmd->add_option("--seed", gc_seed)->capture_default_str();
    gc_cmd->add_option("--tol", gc_tol, "maximum relative error")->capture_default_str();
    int gc_status = 0;
    gc_cmd->callback([&] {
        const auto cfg = gc_cfg.resolve();
        const auto start = std::chrono::steady_clock::now();
        const auto report = full_graph_grad_check(cfg, gc_batch, gc_frames, gc_seed);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("checked %zu gradient entries in %.2f s\nmax relative error %.3e (at %s)\nmax absolute error %.3e\n",
                    report.checked, secs, report.max_rel_error, report.worst.c_str(), report.max_abs_error);
        const bool ok = report.max_rel_error < gc_tol;
        std::cout << (ok ? "PASS" : "FAIL") << "\n";
        gc_status = ok ? 0 : 1;
    });

    // ablate
    auto* ab_cmd = app.add_subcommand("ablate", "kernel-set x loss-mode matrix of dev EER%");
    ConfigArgs ab_cfg;
    ab_cfg.attach(ab_cmd);
    std::string ab_kernels, ab_modes = "ce,ce+cka", ab_train, ab_dev, ab_out;
    ab_cmd->add_option("--kernels", ab_kernels, "kernel sets, e.g. \"3,7;11,15\"")->required();
    ab_cmd->add_option("--modes", ab_modes, "comma-separated: ce, ce+cka")->capture_default_str();
    ab_cmd->add_option("--train", ab_train, "training manifest")->required();
    ab_cmd->add_option("--dev", ab_dev, "dev manifest")->required();
    ab_cmd->add_option("--out", ab_out, "CSV output")->required();
    ab_cmd->callback([&] {
        const auto cfg = ab_cfg.resolve();
        const auto sets = parse_kernel_sets(ab_kernels);
        std::vector<LossMode> modes;
        std::stringstream ss(ab_modes);
        for (std::string m; std::getline(ss, m, ',');) modes.push_back(parse_loss_mode(m));
        if (modes.empty()) throw ConfigError("--modes is empty");
        const auto train_set = Dataset::load(ab_train);
        const auto dev_set = Dataset::load(ab_dev);
        const auto cells = ablation_run(cfg, sets, modes, train_set, dev_set);
        for (const auto& c : cells)
            if (!c.error.empty())
                std::cerr << "cell " << format_kernel_list(c.kernels) << " / " << loss_mode_name(c.mode)
                          << " failed: " << c.error << "\n";
        const auto csv = ablation_csv(cells, sets, modes);
        write_text(ab_out, csv);
        std::cout << csv;
    });

    // heatmap
    auto* hm_cmd = app.add_subcommand("heatmap", "per-condition EER% grid");
    std::string hm_scores, hm_manifest, hm_rows, hm_cols, hm_out;
    hm_cmd->add_option("--scores", hm_scores)->required();
    hm_cmd->add_option("--manifest", hm_manifest)->required();
    hm_cmd->add_option("--rows", hm_rows, "condition key for rows")->required();
    hm_cmd->add_option("--cols", hm_cols, "condition key for columns")->required();
    hm_cmd->add_option("--out", hm_out, "CSV output")->required();
    hm_cmd->callback([&] {
        const auto records = attach_labels(read_scores(hm_scores), read_manifest(hm_manifest));
        const auto csv = heatmap_csv(records, hm_rows, hm_cols);
        write_text(hm_out, csv);
        std::cout << csv;
    });

    // config
    auto* cfg_cmd = app.add_subcommand("config", "print the resolved configuration");
    ConfigArgs show_cfg;
    show_cfg.attach(cfg_cmd);
    cfg_cmd->callback([&] { std::cout << to_text(show_cfg.resolve()); });

    CLI11_PARSE(app, argc, argv);
    return gc_status;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ParseError& e) {
        std::cerr << "parse error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
    }
    return 2;
}
