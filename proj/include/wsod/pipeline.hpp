#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "wsod/adam.hpp"
#include "wsod/data.hpp"
#include "wsod/eval.hpp"
#include "wsod/model.hpp"

namespace wsod {

/// Flat experiment configuration; every field maps to one key of the
/// key=value config file format.
struct TrainConfig {
    int epochs = 30;
    int batch_size = 4;
    double learning_rate = 1e-3;
    double alpha_o = 2.0;
    double alpha_a = 1.0;
    double theta_h = 0.5;
    int n_r = 16;
    int frames = 8;
    std::string prior_variant = "normal"; // normal | grid | center
    bool learn_mu = true;
    bool learn_sigma = true;
    bool prior_normalize = true;
    std::string loss_style = "paper"; // paper | sigmoid_bce
    double supervised_fraction = 0.0;
    double link_lambda = 1.0;
    int tubelets = 16;
    double nms_threshold = 0.5;
    double score_threshold = 0.05;
    std::uint64_t seed = 0;
    int hidden = 16;
    double sigma_init = 0.3;

    void validate() const; // throws std::invalid_argument
    PriorVariant variant() const;
    LossStyle style() const;
};

/// Parses the flat key=value format ('#' comments, blank lines ignored).
/// Unknown or duplicated keys are errors; missing keys keep defaults.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

/// Canonical rendering (fixed key order, shortest-round-trip numbers);
/// the config hash is the FNV-1a of this text.
std::string serialize_train_config(const TrainConfig& cfg);
std::uint64_t config_hash(const TrainConfig& cfg);

/// Synthetic benchmark configs share the key=value format. Planted vectors
/// use comma-separated entries, pairs as x:y (e.g. planted_mu=0.08:0.02,...).
SyntheticConfig parse_synth_config(const std::string& text);
SyntheticConfig load_synth_config(const std::string& path);

struct Checkpoint {
    TrainConfig config;
    TaskSpec task;
    ParamTable params;
    AdamState adam;
    int epoch = 0;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Verifies the stored hash against the embedded config.
Checkpoint load_checkpoint(const std::string& path);
/// Rebuilds trainable state (shapes from the task, values from the table).
ModelParams checkpoint_model(const Checkpoint& ckpt);

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_map = -1.0; // -1 when no validation split was given
};

struct TrainResult {
    Checkpoint checkpoint; // best validation mAP (final epoch without val)
    std::vector<EpochLog> log;
    int skipped_samples = 0;
};

/// Deterministic training: per-sample loss graphs, gradient accumulation
/// over each batch, one Adam step per batch, sigma clamped after every
/// step. The supervised fraction of samples is chosen once per run by
/// seed. Warnings (skipped samples) go to log_stream when given.
TrainResult train(const TrainConfig& cfg, const Dataset& train_ds,
                  const Dataset& val_ds, std::ostream* log_stream = nullptr);

/// Detection pass: object probabilities for every proposal (no person or
/// keypoint inputs), per-class NMS, then the score threshold. Clips are
/// evaluated on one seed-selected frame per sample.
std::vector<Detection> infer(const ModelParams& params, const TrainConfig& cfg,
                             const Dataset& ds);

/// Per-parameter-group maximum relative gradient errors over `count`
/// randomized model/sample draws (finite differences at h=1e-5). Draws
/// whose graphs land near relu kinks, probability clamps or grid cell
/// boundaries are re-drawn so the finite differences stay valid.
struct GradCheckReport {
    std::map<std::string, double> group_max_err;
    int seeds_checked = 0;
    int seeds_skipped = 0;
};

GradCheckReport run_gradcheck(std::uint64_t base_seed, int count);

} // namespace wsod
