#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "sf3d/data.hpp"
#include "sf3d/losses.hpp"
#include "sf3d/model.hpp"

namespace sf3d {

/// Linear warmup from warmup_start to warmup_end, then polynomial decay to 0
/// at total_steps. constant_lr, when set, replaces the whole schedule.
struct ScheduleConfig {
    double warmup_start = 4e-6;
    double warmup_end = 4e-4;
    int64_t warmup_steps = 0;  // 0 with total_steps 0: derived by train()
    int64_t total_steps = 0;
    double poly_power = 0.9;
    std::optional<double> constant_lr;

    void validate() const;
};

double lr_at(int64_t step, const ScheduleConfig& cfg);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;

    void validate() const;
};

struct OptimizerState {
    AdamWConfig hp;
    int64_t step = 0;
    std::vector<std::vector<float>> m, v;
};

OptimizerState make_optimizer_state(const std::vector<Tensor>& params, const AdamWConfig& hp = {});

/// One AdamW update: p -= lr*wd*p, then the bias-corrected Adam step.
/// An empty gradient span counts as zero.
void adamw_step(std::vector<Tensor>& params, const std::vector<std::span<const float>>& grads, OptimizerState& state,
                double lr);
/// Same, reading each parameter's accumulated gradient.
void adamw_step(std::vector<Tensor>& params, OptimizerState& state, double lr);

struct TrainConfig {
    int epochs = 200;
    int batch_size = 4;
    int train_samples = 200;
    int eval_samples = 20;
    int eval_every = 1;         // epochs; the final epoch is always evaluated
    int checkpoint_every = 50;  // epochs; 0 keeps only the final checkpoint
    int stop_after = 0;         // epochs; > 0 ends the run early on the full-length schedule
    double warmup_fraction = 0.05;
    bool augment = true;
    uint64_t seed = 0;  // weight init, shuffling and augmentation
    AdamWConfig optimizer;
    SoftDiceConfig dice;
    std::filesystem::path out_dir;  // empty: no files written
    std::filesystem::path train_dir;  // optional VSEG1 dataset dirs replacing generated splits
    std::filesystem::path eval_dir;

    void validate() const;
};

struct EvalResult {
    double loss = 0.0;
    DiceScore dice;
};

struct EpochRecord {
    int epoch = 0;
    int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;  // mean training loss over the epoch
    std::optional<EvalResult> eval;
    double wall_ms = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
    std::vector<EpochRecord> log;
    EvalResult final_eval;
    int64_t steps = 0;
};

/// Called after every epoch; handy for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains a fresh model. Writes metrics.jsonl, run.json and checkpoints under
/// out_dir when it is set. Aborts with NonFiniteLoss on a NaN/inf loss.
TrainResult train(const ModelConfig& model_cfg, const SynthConfig& data_cfg, ScheduleConfig sched, const TrainConfig& cfg,
                  SegFormer3D* trained = nullptr, const EpochCallback& on_epoch = {});

/// Forward-only pass over samples in batches: mean dice-CE loss and hard dice
/// accumulated over the whole split.
EvalResult evaluate(const SegFormer3D& model, const std::vector<VolumeSample>& samples, int batch_size = 4,
                    const SoftDiceConfig& dice = {});

/// Splits used by train(): train indices [0, n_train), eval indices [n_train, n_train + n_eval).
std::vector<VolumeSample> generate_split(const SynthConfig& cfg, int64_t first_index, int64_t count);

}  // namespace sf3d
