// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>

#include "mgsd/checkpoint.hpp"
#include "mgsd/config.hpp"
#include "mgsd/errors.hpp"
#include "mgsd/metrics.hpp"
#include "mgsd/objectives.hpp"
#include "mgsd/pooling.hpp"
#include "mgsd/report.hpp"
#include "mgsd/training.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace mgsd;
using oracle::Vec;
using testutil::max_diff;
using testutil::randn;
using testutil::Rng;
using testutil::vec;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity(const fs::path& src) {
    const auto cfg = load_config(src / "configs" / "gradcheck.cfg");
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = full_graph_grad_check(cfg, 2, 7, 1);
    const double secs = seconds_since(t0);
    return {r.max_rel_error < 1e-4 && secs < 60.0,
            fmt("max rel error %.3e over %zu entries, %.2f s", r.max_rel_error, r.checked, secs)};
}

ModelConfig random_model_config(Rng& rng) {
    ModelConfig c;
    c.layers = rng.index(1, 4);
    c.feat_dim = rng.index(2, 6);
    c.agg_dim = 2 * rng.index(1, 3);
    c.gate = rng.index(0, 1) ? GateMode::Vector : GateMode::Matrix;
    c.blocks = rng.index(1, 3);
    c.kernels = rng.index(0, 1) ? std::vector<std::size_t>{3, 5} : std::vector<std::size_t>{1, 3, 7};
    c.d_inter = 2 * rng.index(1, 4);
    c.residual = rng.index(0, 3) != 0;
    c.fusion = rng.index(0, 1) ? FusionMode::Learned : FusionMode::Mean;
    c.conv = rng.index(0, 1) ? ConvMode::Full : ConvMode::Depthwise;
    c.heads = 2;
    c.head_hidden = rng.index(0, 1) ? 0 : 3;
    return c;
}

Outcome oracle_equivalence() {
    constexpr int kInstances = 100;
    constexpr double kTol = 1e-10;
    std::map<std::string, double> worst;
    auto note = [&](const std::string& op, double err) { worst[op] = std::max(worst[op], err); };
    Rng rng(2024);
    for (int i = 0; i < kInstances; ++i) {
        const auto mc = random_model_config(rng);
        auto model = Model::init(mc, static_cast<std::uint64_t>(i));
        testutil::randomize(model, rng);
        const std::size_t B = rng.index(1, 4);
        const auto batch = testutil::random_batch(rng, B, static_cast<std::uint32_t>(mc.layers),
                                                  static_cast<std::uint32_t>(mc.feat_dim), 1, 8);
        const std::size_t T = batch.max_frames, U = mc.agg_dim, Q = mc.concat_dim();
        Graph g(false);

        const auto agg = aggregate(g, batch, model.aggregator);
        const Vec agg_ref = oracle::aggregate(batch.features, batch.mask, B, batch.layers, T, batch.dim,
                                              vec(model.aggregator.proj), vec(model.aggregator.proj_bias),
                                              vec(model.aggregator.w1), vec(model.aggregator.w2), U,
                                              mc.gate == GateMode::Vector);
        note("aggregate", max_diff(agg.values, agg_ref));

        const auto blk = block_forward(g, agg.values, model.blocks[0], agg.mask);
        note("block_forward",
             max_diff(blk, oracle::block(agg_ref, batch.mask, B, T, U, mc.d_inter, testutil::to_oracle(model.blocks[0]))));

        std::vector<Tensor> branches;
        std::vector<Vec> raw;
        const std::size_t J = rng.index(1, 4);
        for (std::size_t j = 0; j < J; ++j) {
            branches.push_back(randn(rng, {B, T, U}));
            raw.push_back(vec(branches.back()));
        }
        const auto logits_f = randn(rng, {J});
        note("fusion", max_diff(fusion(g, branches), oracle::fusion_mean(raw)));
        note("fusion", max_diff(fusion_learned(g, branches, logits_f), oracle::fusion_weighted(raw, vec(logits_f))));

        const auto G = randn(rng, {B, T, Q});
        const auto pooled = mhap(g, G, agg.mask, model.pool);
        note("mhap", max_diff(pooled, oracle::mhap(vec(G), batch.mask, B, T, Q, vec(model.pool.u), mc.heads,
                                                   model.pool.eps_std)));

        const auto logits = classify(g, pooled, model.head);
        const Vec hw = mc.head_hidden ? vec(model.head.hidden_w) : Vec{};
        const Vec hb = mc.head_hidden ? vec(model.head.hidden_b) : Vec{};
        note("classify", max_diff(logits, oracle::classify(vec(pooled), B, 2 * Q, hw, hb, mc.head_hidden,
                                                           vec(model.head.w), vec(model.head.b))));

        const auto scaled = randn(rng, {B, 2}, false, 3.0);
        const ClassWeights w{rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)};
        note("weighted_ce", std::abs(weighted_ce(g, scaled, batch.labels, w).item() -
                                     oracle::weighted_ce(vec(scaled), batch.labels, w.bonafide, w.spoof)));

        const std::size_t m = rng.index(3, 30), p1 = rng.index(1, 8), p2 = rng.index(1, 8);
        const auto S = randn(rng, {m, p1});
        const auto Y = randn(rng, {m, p2});
        note("linear_cka", std::abs(linear_cka(g, S, Y).item() - *oracle::linear_cka(vec(S), p1, vec(Y), p2, m)));

        // cka_loss over random layer outputs with every valid frame kept.
        const std::size_t M = rng.index(2, 4);
        std::vector<Tensor> layers;
        for (std::size_t l = 0; l < M; ++l) layers.push_back(randn(rng, {B, T, U}));
        std::size_t valid = 0;
        for (double v : batch.mask) valid += v != 0.0;
        if (valid >= 2) {
            const auto loss = cka_loss(g, layers, agg.mask, 4096, 1, 0).loss.item();
            std::vector<Vec> rows(M);
            for (std::size_t l = 0; l < M; ++l)
                for (std::size_t r = 0; r < B * T; ++r)
                    if (batch.mask[r] != 0.0)
                        for (std::size_t u = 0; u < U; ++u) rows[l].push_back(layers[l].data()[r * U + u]);
            double sum = 0.0;
            std::size_t pairs = 0;
            for (std::size_t a = 0; a < M; ++a)
                for (std::size_t b = a + 1; b < M; ++b)
                    if (const auto c = oracle::linear_cka(rows[a], U, rows[b], U, valid)) {
                        sum += *c;
                        ++pairs;
                    }
            note("cka_loss", std::abs(loss - sum / static_cast<double>(pairs)));
        }

        const auto llrs = llr(scaled);
        double llr_err = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const double z0 = scaled.data()[2 * b], z1 = scaled.data()[2 * b + 1];
            const double mx = std::max(z0, z1);
            const double lse = mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx));
            llr_err = std::max(llr_err, std::abs(llrs[b] - ((z0 - lse) - (z1 - lse))));
        }
        note("llr", llr_err);
    }
    Outcome out{true, ""};
    for (const auto& [op, err] : worst) {
        out.pass = out.pass && err <= kTol;
        out.detail += fmt("%s%s %.1e", out.detail.empty() ? "" : ", ", op.c_str(), err);
    }
    out.pass = out.pass && worst.size() == 9;
    out.detail = fmt("%d instances each; ", kInstances) + out.detail;
    return out;
}

Outcome eer_correctness() {
    Rng rng(7);
    double worst = 0.0;
    for (int set = 0; set < 1000; ++set) {
        const std::size_t nb = rng.index(1, 100), ns = rng.index(1, 100);
        const double grid = set % 4 == 0 ? 0.0 : rng.uniform(0.05, 0.5);
        auto draw = [&](double shift) {
            const double v = rng.normal() + shift;
            return grid > 0 ? std::round(v / grid) * grid : v;
        };
        Vec bona, spoof;
        for (std::size_t i = 0; i < nb; ++i) bona.push_back(draw(rng.uniform(-1.0, 2.0)));
        for (std::size_t i = 0; i < ns; ++i) spoof.push_back(draw(0.0));
        // Exact duplicates across classes.
        for (std::size_t i = 0; i < rng.index(0, 3); ++i) spoof.push_back(bona[rng.index(0, nb - 1)]);
        worst = std::max(worst, std::abs(compute_eer(bona, spoof).eer - oracle::eer(bona, spoof)));
    }
    const Vec wb{0.9, 0.8, 0.3}, ws{0.7, 0.2, 0.1};
    const double worked = compute_eer(wb, ws).eer;
    return {worst <= 1e-12 && worked == 1.0 / 3.0,
            fmt("1000 sets, max |sweep - brute| %.1e; worked example %.17g", worst, worked)};
}

Vec random_orthogonal(Rng& rng, std::size_t p) {
    Vec q = rng.normals(p * p);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0.0;
            for (std::size_t r = 0; r < p; ++r) dot += q[r * p + i] * q[r * p + j];
            for (std::size_t r = 0; r < p; ++r) q[r * p + i] -= dot * q[r * p + j];
        }
        double n = 0.0;
        for (std::size_t r = 0; r < p; ++r) n += q[r * p + i] * q[r * p + i];
        for (std::size_t r = 0; r < p; ++r) q[r * p + i] /= std::sqrt(n);
    }
    return q;
}

Outcome cka_invariances() {
    Rng rng(11);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t m = rng.index(4, 40), p = rng.index(1, 8), q = rng.index(1, 8);
        const auto S = randn(rng, {m, p});
        const auto Y = randn(rng, {m, q});
        Graph g(false);
        const double base = linear_cka(g, S, Y).item();
        const auto R = Tensor::from({p, p}, random_orthogonal(rng, p));
        worst = std::max(worst, std::abs(linear_cka(g, S, S).item() - 1.0));
        worst = std::max(worst, std::abs(linear_cka(g, S, matmul(g, S, R)).item() - 1.0));
        worst = std::max(worst, std::abs(linear_cka(g, matmul(g, S, R), Y).item() - base));
        worst = std::max(worst, std::abs(linear_cka(g, scale(g, S, rng.uniform(1e-3, 1e3)), Y).item() - base));
        worst = std::max(worst, std::abs(linear_cka(g, Y, S).item() - base));
    }
    bool raised = false;
    try {
        Graph g(false);
        linear_cka(g, Tensor::full({8, 3}, 4.0), randn(rng, {8, 2}));
    } catch (const DegenerateInputError&) {
        raised = true;
    }
    return {worst <= 1e-9 && raised,
            fmt("100 pairs, max deviation %.1e; constant input %s", worst, raised ? "raises" : "does not raise")};
}

Dataset synth_split(const fs::path& dir, std::size_t n, double sep, std::uint64_t split, const std::string& prefix) {
    SynthSpec s;
    s.n_utts = n;
    s.layers = 4;
    s.dim = 16;
    s.class_separation = sep;
    s.seed = 7;
    s.split = split;
    s.id_prefix = prefix;
    return Dataset::from(synth_generate(s, dir, prefix + ".jsonl"));
}

struct Runs {
    fs::path work;
    Config cfg;
    Dataset train_set, dev_set;
    TrainResult joint, joint_again, ce_only;
    fs::path joint_dir, joint_again_dir;
    double joint_secs = 0.0;
};

Outcome end_to_end(Runs& r) {
    const auto train_eer = evaluate(r.joint.best_model, r.train_set, r.cfg.train).eer.eer;
    const auto dev_eer = evaluate(r.joint.best_model, r.dev_set, r.cfg.train).eer.eer;
    return {train_eer == 0.0 && dev_eer <= 0.05 && r.joint.epochs_run <= 30 && r.joint_secs < 600.0,
            fmt("train EER %.2f%%, dev EER %.2f%% (best epoch %llu of %zu), %.1f s", 100 * train_eer, 100 * dev_eer,
                static_cast<unsigned long long>(r.joint.best.epoch), r.joint.epochs_run, r.joint_secs)};
}

Outcome cka_direction(Runs& r) {
    const std::size_t M = r.cfg.model.blocks;
    const double joint =
        mean_strict_pair(pairwise_block_cka(r.joint.best_model, r.dev_set, 1024, r.cfg.train.seed), M);
    const double ce = mean_strict_pair(pairwise_block_cka(r.ce_only.best_model, r.dev_set, 1024, r.cfg.train.seed), M);
    return {joint < ce, fmt("dev mean pairwise CKA: CE+CKA %.6f vs CE %.6f (best epochs %llu, %llu)", joint, ce,
                            static_cast<unsigned long long>(r.joint.best.epoch),
                            static_cast<unsigned long long>(r.ce_only.best.epoch))};
}

Outcome symmetry_null(Runs& r) {
    const auto tr = synth_split(r.work / "null", 200, 0.0, 0, "train");
    const auto dev = synth_split(r.work / "null", 100, 0.0, 1, "dev");
    const auto result = train(tr, dev, r.cfg);
    const double eer = evaluate(result.best_model, dev, r.cfg.train).eer.eer;
    return {eer >= 0.40 && eer <= 0.60,
            fmt("sep=0 dev EER %.2f%% (best epoch %llu of %zu)", 100 * eer,
                static_cast<unsigned long long>(result.best.epoch), result.epochs_run)};
}

Outcome padding_invariance() {
    Rng rng(5);
    ModelConfig mc;
    mc.layers = 4;
    mc.feat_dim = 16;
    mc.agg_dim = 16;
    mc.d_inter = 64;
    auto model = Model::init(mc, 3);
    testutil::randomize(model, rng, 0.3);
    const auto stacks = testutil::random_stacks(rng, 50, 4, 16, 1, 60);
    const auto batched = score_batch(model, stacks);
    double worst = 0.0;
    for (std::size_t i = 0; i < stacks.size(); ++i)
        worst = std::max(worst, std::abs(score_batch(model, std::span(&stacks[i], 1))[0] - batched[i]));
    return {worst <= 1e-9, fmt("50 utterances (T 1..60) in one batch, max |alone - batched| %.1e", worst)};
}

Outcome determinism(Runs& r) {
    std::string mismatched;
    for (const char* f : {"train.log", "config.txt", "best.ckpt", "dev_scores.tsv"}) {
        const auto a = slurp(r.joint_dir / f), b = slurp(r.joint_again_dir / f);
        if (a.empty() || a != b) mismatched += std::string(mismatched.empty() ? "" : ", ") + f;
    }
    return {mismatched.empty(), mismatched.empty() ? "train.log, config.txt, best.ckpt, dev_scores.tsv identical"
                                                   : "differs: " + mismatched};
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path src = argc > 1 ? fs::path(argv[1]) : fs::path(MGSD_SOURCE_DIR);
    const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "mgsd_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    int failures = 0;
    auto report = [&](const char* name, const std::function<Outcome()>& fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    };

    report("gradient-integrity", [&] { return gradient_integrity(src); });
    report("oracle-equivalence", oracle_equivalence);
    report("eer-correctness", eer_correctness);
    report("cka-invariances", cka_invariances);

    Runs runs;
    runs.work = work;
    bool trained = false;
    std::string train_error;
    try {
        runs.cfg = load_config(src / "configs" / "synth_small.cfg");
        runs.train_set = synth_split(work / "data", 200, 6.0, 0, "train");
        runs.dev_set = synth_split(work / "data", 100, 6.0, 1, "dev");
        runs.joint_dir = work / "joint_a";
        runs.joint_again_dir = work / "joint_b";
        const auto t0 = std::chrono::steady_clock::now();
        runs.joint = train_run(runs.train_set, runs.dev_set, runs.cfg, runs.joint_dir);
        runs.joint_secs = seconds_since(t0);
        runs.joint_again = train_run(runs.train_set, runs.dev_set, runs.cfg, runs.joint_again_dir);
        auto ce_cfg = runs.cfg;
        ce_cfg.train.cka = false;
        runs.ce_only = train(runs.train_set, runs.dev_set, ce_cfg);
        trained = true;
    } catch (const std::exception& e) {
        train_error = std::string("training failed: ") + e.what();
    }
    auto needs_runs = [&](Outcome (*fn)(Runs&)) {
        return [&, fn] { return trained ? fn(runs) : Outcome{false, train_error}; };
    };
    report("end-to-end-learnability", needs_runs(end_to_end));
    report("cka-directional-effect", needs_runs(cka_direction));
    report("symmetry-null", needs_runs(symmetry_null));
    report("padding-invariance", padding_invariance);
    report("determinism", needs_runs(determinism));

    std::cout << (failures ? fmt("%d criteria failed", failures) : std::string("all criteria passed")) << std::endl;
    return failures ? 1 : 0;
}
