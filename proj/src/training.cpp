// SPDX-License-Identifier: Apache-2.0
#include "mgsd/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "mgsd/errors.hpp"
#include "mgsd/ops.hpp"

namespace mgsd {

namespace {

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

double max_abs_grad(std::span<const Tensor> params) {
    double mx = 0.0;
    for (const auto& p : params)
        for (double v : p.grad()) mx = std::max(mx, std::abs(v));
    return mx;
}

Batch single(const HiddenStack& stack, int label) {
    return make_batch(std::span(&stack, 1), std::span(&label, 1));
}

}  // namespace

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
    return from(read_manifest(manifest_path));
}

Dataset Dataset::from(Manifest manifest) {
    Dataset d;
    d.stacks = load_all(manifest);
    d.manifest = std::move(manifest);
    return d;
}

AdamState make_adam_state(std::span<const Tensor> params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.numel(), 0.0);
        s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
}

void adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.size() != params.size()) throw UsageError("adam_step: state does not match parameters");
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].data();
        auto grad = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            double gj = grad[j];
            if (cfg.decay == DecayMode::Coupled) gj += cfg.weight_decay * theta[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            if (cfg.decay == DecayMode::Decoupled) theta[j] -= cfg.lr * cfg.weight_decay * theta[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            theta[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
    }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double v : p.grad()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (auto& p : params)
            for (auto& v : p.grad()) v *= factor;
    }
    return norm;
}

LossBreakdown training_loss(Graph& g, const Model& model, const Batch& batch, const TrainConfig& cfg,
                            Tensor& total) {
    const auto out = model.forward(g, batch);
    auto ce = weighted_ce(g, out.logits, batch.labels, {cfg.weight_bonafide, cfg.weight_spoof});
    LossBreakdown lb;
    lb.ce = ce.item();
    total = ce;
    if (cfg.cka && out.stack.per_layer.size() >= 2) {
        auto cka = cka_loss(g, out.stack.per_layer, out.mask, cfg.m_max, g.seed(), g.step());
        lb.cka = cka.loss.item();
        lb.pairwise_cka = std::move(cka.pairwise);
        total = add(g, ce, cka.loss);
    }
    lb.total = total.item();
    return lb;
}

std::vector<double> score_batch(const Model& model, std::span<const HiddenStack> stacks) {
    std::vector<int> labels(stacks.size(), kBonafide);
    Graph g(false);
    return llr(model.forward(g, make_batch(stacks, labels)).logits);
}

namespace {

std::vector<double> pairwise_from_rows(const std::vector<std::vector<double>>& rows, std::size_t U,
                                       std::size_t max_rows, std::uint64_t seed) {
    const std::size_t M = rows.size();
    const std::size_t n = rows.front().size() / U;
    const auto picked = sample_cka_rows(Tensor::full({n}, 1.0), max_rows, seed, 0);
    std::vector<Tensor> samples;
    for (std::size_t m = 0; m < M; ++m) {
        Graph g(false);
        samples.push_back(gather_rows(g, Tensor::from({n, U}, rows[m]), picked));
    }
    std::vector<double> pairwise(M * M, 1.0);
    for (std::size_t p = 0; p < M; ++p)
        for (std::size_t q = p + 1; q < M; ++q) {
            Graph g(false);
            const auto c = try_linear_cka(g, samples[p], samples[q]);
            pairwise[p * M + q] = pairwise[q * M + p] =
                c ? c->item() : std::numeric_limits<double>::quiet_NaN();
        }
    return pairwise;
}

void append_blocks(std::vector<std::vector<double>>& rows, const ModelOutput& out) {
    for (std::size_t m = 0; m < rows.size(); ++m) {
        auto v = out.stack.per_layer[m].data();
        rows[m].insert(rows[m].end(), v.begin(), v.end());
    }
}

}  // namespace

std::vector<double> pairwise_block_cka(const Model& model, const Dataset& data, std::size_t max_rows,
                                       std::uint64_t seed) {
    std::vector<std::vector<double>> rows(model.config().blocks);
    for (std::size_t i = 0; i < data.size(); ++i) {
        Graph g(false);
        append_blocks(rows, model.forward(g, single(data.stacks[i], data.manifest.rows[i].label)));
    }
    return pairwise_from_rows(rows, model.config().agg_dim, max_rows, seed);
}

double mean_strict_pair(const std::vector<double>& pairwise, std::size_t blocks) {
    if (blocks < 2) return 0.0;
    double s = 0.0;
    for (std::size_t p = 0; p < blocks; ++p)
        for (std::size_t q = p + 1; q < blocks; ++q) s += pairwise[p * blocks + q];
    return s * 2.0 / static_cast<double>(blocks * (blocks - 1));
}

EvalResult evaluate(const Model& model, const Dataset& data, const TrainConfig& cfg, std::size_t cka_rows) {
    if (data.size() == 0) throw DataError("evaluate: empty dataset");
    EvalResult result;
    std::vector<double> all_logits;
    std::vector<int> labels;
    std::vector<std::vector<double>> rows(model.config().blocks);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& row = data.manifest.rows[i];
        const auto& stack = data.stacks[i];
        if (stack.utt_id != row.utt_id) {
            throw DataError("evaluate: feature/manifest mismatch at '" + row.utt_id + "'");
        }
        if (stack.layers != model.config().layers || stack.dim != model.config().feat_dim) {
            throw DataError("evaluate: utterance '" + row.utt_id + "' has (L,D)=(" +
                            std::to_string(stack.layers) + "," + std::to_string(stack.dim) +
                            ") but the model expects (" + std::to_string(model.config().layers) + "," +
                            std::to_string(model.config().feat_dim) + ")");
        }
        Graph g(false);
        const auto out = model.forward(g, single(stack, row.label));
        append_blocks(rows, out);
        const auto z = out.logits.data();
        all_logits.insert(all_logits.end(), z.begin(), z.end());
        labels.push_back(row.label);
        result.scores.push_back({row.utt_id, z[0] - z[1], row.label, row.conditions});
    }
    result.eer = compute_eer(result.scores);
    {
        Graph g(false);
        const auto logits = Tensor::from({labels.size(), 2}, std::move(all_logits));
        result.loss.ce = weighted_ce(g, logits, labels, {cfg.weight_bonafide, cfg.weight_spoof}).item();
    }
    const std::size_t M = model.config().blocks;
    if (M >= 2) {
        result.loss.pairwise_cka = pairwise_from_rows(rows, model.config().agg_dim, cka_rows, cfg.seed);
        result.loss.cka = mean_strict_pair(result.loss.pairwise_cka, M);
    }
    result.loss.total = result.loss.ce + result.loss.cka;
    return result;
}

EvalResult evaluate(const Checkpoint& ckpt, const Dataset& data) {
    return evaluate(model_from_checkpoint(ckpt), data, ckpt.config.train);
}

TrainResult train(const Dataset& train_set, const Dataset& dev_set, const Config& cfg,
                  const std::function<void(const std::string&)>& on_log) {
    cfg.model.validate();
    cfg.train.validate();
    if (train_set.size() == 0 || dev_set.size() == 0) throw DataError("train: empty train or dev set");
    {
        bool has_bona = false, has_spoof = false;
        for (const auto& row : train_set.manifest.rows) {
            has_bona = has_bona || row.label == kBonafide;
            has_spoof = has_spoof || row.label == kSpoof;
        }
        if (!has_bona || !has_spoof) throw DataError("train: training set must contain both classes");
    }
    const auto& tc = cfg.train;

    TrainResult result;
    auto log = [&](std::string line) {
        if (on_log) on_log(line);
        result.log.push_back(std::move(line));
    };

    auto model = Model::init(cfg.model, tc.seed);
    auto params = model.parameters();
    auto adam = make_adam_state(params);
    std::mt19937_64 rng(tc.seed);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    double best_eer = 2.0;
    std::size_t since_best = 0;
    std::uint64_t step = 0;
    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double ce_sum = 0.0, cka_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t end = std::min(order.size(), start + tc.batch_size);
            std::vector<HiddenStack> stacks;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                stacks.push_back(train_set.stacks[order[i]]);
                labels.push_back(train_set.manifest.rows[order[i]].label);
            }
            const auto batch = make_batch(stacks, labels);

            for (auto& p : params) p.zero_grad();
            Graph g(true);
            g.set_training(true);
            g.set_rng(tc.seed, step);
            Tensor total;
            const auto lb = training_loss(g, model, batch, tc, total);
            g.backward(total);
            if (!std::isfinite(lb.total)) {
                throw TrainingError(fmt("non-finite loss at epoch %zu, batch %zu (ce=%g, cka=%g, max|grad|=%g)",
                                        epoch, n_batches, lb.ce, lb.cka, max_abs_grad(params)));
            }
            if (tc.clip_norm > 0.0) clip_grad_norm(params, tc.clip_norm);
            adam_step(params, adam, tc);

            log(fmt("step=%llu epoch=%zu ce=%.17g cka=%.17g total=%.17g",
                    static_cast<unsigned long long>(step), epoch, lb.ce, lb.cka, lb.total));
            ce_sum += lb.ce;
            cka_sum += lb.cka;
            ++n_batches;
            ++step;
        }

        const auto dev = evaluate(model, dev_set, tc);
        result.dev_eer_history.push_back(dev.eer.eer);
        const bool improved = dev.eer.eer < best_eer;
        if (improved) {
            best_eer = dev.eer.eer;
            since_best = 0;
            result.best = make_checkpoint(model, cfg, epoch, dev.eer.eer, rng_state(rng));
        } else {
            ++since_best;
        }
        log(fmt("epoch=%zu mean_ce=%.17g mean_cka=%.17g dev_eer=%.17g dev_ce=%.17g dev_cka=%.17g best_epoch=%llu",
                epoch, ce_sum / static_cast<double>(n_batches), cka_sum / static_cast<double>(n_batches),
                dev.eer.eer, dev.loss.ce, dev.loss.cka, static_cast<unsigned long long>(result.best.epoch)));
        result.epochs_run = epoch;
        if (since_best >= tc.patience) {
            log(fmt("early_stop epoch=%zu patience=%zu", epoch, tc.patience));
            break;
        }
    }
    result.best_model = model_from_checkpoint(result.best);
    return result;
}

TrainResult train_run(const Dataset& train_set, const Dataset& dev_set, const Config& cfg,
                      const std::filesystem::path& out_dir, const std::function<void(const std::string&)>& on_log) {
    std::filesystem::create_directories(out_dir);
    std::ofstream log(out_dir / "train.log", std::ios::trunc);
    if (!log) throw DataError("cannot write " + (out_dir / "train.log").string());
    auto result = train(train_set, dev_set, cfg, [&](const std::string& line) {
        log << line << '\n';
        log.flush();
        if (on_log) on_log(line);
    });
    std::ofstream(out_dir / "config.txt", std::ios::trunc) << to_text(cfg);
    save_checkpoint(result.best, out_dir / "best.ckpt");
    write_scores(out_dir / "dev_scores.tsv", evaluate(result.best_model, dev_set, cfg.train).scores);
    return result;
}

GradCheckReport full_graph_grad_check(const Config& cfg, std::size_t batch, std::size_t max_frames,
                                      std::uint64_t seed) {
    cfg.model.validate();
    if (batch == 0 || max_frames < 2) throw ConfigError("grad check needs batch >= 1 and max_frames >= 2");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<HiddenStack> stacks;
    std::vector<int> labels;
    for (std::size_t b = 0; b < batch; ++b) {
        HiddenStack s;
        s.utt_id = "gc" + std::to_string(b);
        s.layers = static_cast<std::uint32_t>(cfg.model.layers);
        s.dim = static_cast<std::uint32_t>(cfg.model.feat_dim);
        s.frames = static_cast<std::uint32_t>(max_frames - (b * 2) % (max_frames - 1));
        s.values.resize(std::size_t{s.layers} * s.frames * s.dim);
        for (auto& v : s.values) v = static_cast<float>(normal(rng));
        stacks.push_back(std::move(s));
        labels.push_back(static_cast<int>(b % 2));
    }
    const auto data = make_batch(stacks, labels);
    auto model = Model::init(cfg.model, seed);
    auto params = model.parameters();
    const auto build = [&](Graph& g) {
        g.set_training(true);
        g.set_rng(seed, 0);
        Tensor total;
        training_loss(g, model, data, cfg.train, total);
        return total;
    };
    return grad_check(build, params);
}

}  // namespace mgsd
