#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bridgegen/autograd.hpp"
#include "bridgegen/dataset.hpp"
#include "bridgegen/likelihood.hpp"
#include "bridgegen/model.hpp"

namespace bridgegen::training {

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 16;
    int epochs = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t rng_seed = 1;
    int checkpoint_every = 0; // steps; 0 = final checkpoint only
    std::string data_dir;
    std::string out_dir;
    std::string resume_from; // optional checkpoint path
    model::ModelConfig model;

    void validate() const;
};

TrainConfig parse_train_config(const std::filesystem::path& json_path);

struct AdamMoments {
    ParamSet m;
    ParamSet v;
};

AdamMoments zero_moments(const ParamSet& params);

// Standard bias-corrected Adam, f64 update arithmetic on f32 storage.
void adam_step(ParamSet& params, const GradMap& grads, AdamMoments& moments,
               int64_t step, const TrainConfig& cfg);

struct Checkpoint {
    model::ModelConfig config;
    ParamSet params;
    AdamMoments moments;
    uint64_t step = 0;
    uint64_t rng_seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct MetricRow {
    int64_t step = 0;
    int epoch = 0;
    std::string split;
    double bits_per_dim = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<MetricRow> metrics; // rows produced by this call (resume appends)
};

// Shuffled minibatch NLL training with per-step metric logging to
// out_dir/metrics.csv. All rng streams derive from (rng_seed, epoch|step)
// counters, so resuming from a checkpoint replays bit-identically.
TrainResult train(const TrainConfig& cfg);

struct EvalReport {
    likelihood::NllReport overall;
    std::map<std::string, likelihood::NllReport> per_subtype;
};

EvalReport eval_nll(const Checkpoint& ckpt, const std::filesystem::path& data_dir);

// Targets for one image under the checkpointed head: quantized bins for the
// categorical head, raw 0..255 values for the logistic mixture.
std::vector<int> targets_for(const model::ModelConfig& cfg, const dataset::RasterImage& img);

} // namespace bridgegen::training
