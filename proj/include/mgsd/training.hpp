// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mgsd/checkpoint.hpp"
#include "mgsd/config.hpp"
#include "mgsd/feature_store.hpp"
#include "mgsd/grad_check.hpp"
#include "mgsd/metrics.hpp"
#include "mgsd/model.hpp"
#include "mgsd/objectives.hpp"

namespace mgsd {

/// A manifest with its features loaded into memory.
struct Dataset {
    Manifest manifest;
    std::vector<HiddenStack> stacks;

    static Dataset load(const std::filesystem::path& manifest_path);
    static Dataset from(Manifest manifest);
    std::size_t size() const { return stacks.size(); }
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
};

AdamState make_adam_state(std::span<const Tensor> params);

/// One Adam update from the gradients stored on `params`, with bias
/// correction. Decoupled decay shrinks theta by lr * wd * theta before the
/// Adam step; coupled decay adds wd * theta to the gradient instead.
void adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

/// Builds the training objective on `g`: weighted CE plus, when enabled, the
/// CKA loss over the block outputs. `total` receives the scalar to
/// differentiate.
LossBreakdown training_loss(Graph& g, const Model& model, const Batch& batch, const TrainConfig& cfg,
                            Tensor& total);

struct EvalResult {
    std::vector<ScoreRecord> scores;
    EerResult eer;
    LossBreakdown loss;  // CE over the whole set; CKA measured on pooled frames
};

/// Scores every utterance alone (no padding, dropout off) and reports the
/// pooled EER. CKA statistics come from at most `cka_rows` sampled frames.
EvalResult evaluate(const Model& model, const Dataset& data, const TrainConfig& cfg,
                    std::size_t cka_rows = 1024);
EvalResult evaluate(const Checkpoint& ckpt, const Dataset& data);

/// Scores a set of utterances as one padded batch.
std::vector<double> score_batch(const Model& model, std::span<const HiddenStack> stacks);

/// Per-layer mean pairwise linear CKA among block outputs over the dataset's
/// valid frames (metric mode). Returns the M x M matrix.
std::vector<double> pairwise_block_cka(const Model& model, const Dataset& data, std::size_t max_rows,
                                       std::uint64_t seed);
double mean_strict_pair(const std::vector<double>& pairwise, std::size_t blocks);

struct TrainResult {
    Checkpoint best;
    Model best_model;
    std::vector<std::string> log;
    std::size_t epochs_run = 0;
    std::vector<double> dev_eer_history;
};

/// Seeded shuffle/batch/forward/backward/Adam loop with early stopping on
/// dev EER. Keeps the earliest epoch with the lowest dev EER. Throws
/// TrainingError on a non-finite loss. Each log line is also passed to
/// `on_log` if given.
TrainResult train(const Dataset& train_set, const Dataset& dev_set, const Config& cfg,
                  const std::function<void(const std::string&)>& on_log = {});

/// train() plus the run artifacts in out_dir: train.log, config.txt,
/// best.ckpt and dev_scores.tsv (best model on the dev set).
TrainResult train_run(const Dataset& train_set, const Dataset& dev_set, const Config& cfg,
                      const std::filesystem::path& out_dir,
                      const std::function<void(const std::string&)>& on_log = {});

/// Finite-difference check of the whole training objective (CE plus CKA when
/// enabled, dropout active) on random hidden states: `batch` utterances with
/// lengths spread over [2, max_frames], so padding is exercised.
GradCheckReport full_graph_grad_check(const Config& cfg, std::size_t batch, std::size_t max_frames,
                                      std::uint64_t seed);

}  // namespace mgsd
