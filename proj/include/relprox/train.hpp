#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "relprox/dataops.hpp"
#include "relprox/loss.hpp"
#include "relprox/model.hpp"

namespace relprox {

struct TrainConfig {
    int epochs = 60;
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lr_decay_factor = 0.1;
    int lr_decay_every = 20;
    int batch_size = 16;
    int k_max = 7;
    double patch_frac = 0.5;
    int warmup_epochs = 6;
    uint64_t seed = 1;
    uint64_t eval_seed = 9001;  // fixed crop seed for evaluation passes
    LossConfig loss;
    Variant variant = Variant::full;
    int d = 64;
    int ast_layers = 2;
    bool use_positional = false;
    int encoder_input = 16;
};

void validate(const TrainConfig& cfg);

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
    int k = 0;
    long long wall_ms = 0;
};

std::string metrics_json_line(const EpochMetrics& m);

struct TrainState {
    TrainConfig cfg;
    ModelParams params;
    std::vector<Tensor> momenta;  // aligned with params.named_params() order
    int epoch = 0;                // next epoch to run
};

TrainState init_train_state(const TrainConfig& cfg);

// Crop plan used for a given training epoch (warmup handling included; for
// k_max < 5 every view is a random crop and the warmup switch is moot).
CropPlan train_plan(const TrainConfig& cfg, int epoch);
CropPlan eval_plan(const TrainConfig& cfg);

struct TrainResult {
    TrainState state;
    std::vector<EpochMetrics> metrics;
};

// Runs state.epoch .. cfg.epochs-1. When checkpoint_dir is nonempty a
// checkpoint is written after each epoch; a divergence abort therefore
// leaves the last good epoch on disk. on_epoch fires after each epoch's
// metrics are computed.
TrainResult train(TrainState state, const Dataset& ds,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {},
                  const std::filesystem::path& checkpoint_dir = {});

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {},
                         const std::filesystem::path& checkpoint_dir = {}) {
    return train(init_train_state(cfg), ds, on_epoch, checkpoint_dir);
}

void checkpoint_save(const TrainState& state, const std::filesystem::path& file);
TrainState checkpoint_load(const std::filesystem::path& file);

}  // namespace relprox
