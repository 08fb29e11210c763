#include "sf3d/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "sf3d/ops.hpp"

namespace sf3d {

void ScheduleConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) { check(ok, ErrorCode::InvalidConfig, "schedule: " + msg); };
    if (constant_lr) {
        require(*constant_lr > 0.0 && std::isfinite(*constant_lr), "constant_lr must be positive");
        return;
    }
    require(warmup_start > 0.0 && warmup_start < warmup_end, "need 0 < warmup_start < warmup_end");
    require(warmup_steps >= 0 && warmup_steps < total_steps, "need 0 <= warmup_steps < total_steps");
    require(poly_power > 0.0, "poly_power must be positive");
}

double lr_at(int64_t step, const ScheduleConfig& cfg) {
    cfg.validate();
    check(step >= 0, ErrorCode::InvalidArgument, "negative step");
    if (cfg.constant_lr) return *cfg.constant_lr;
    if (step < cfg.warmup_steps)
        return cfg.warmup_start +
               (cfg.warmup_end - cfg.warmup_start) * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    if (step >= cfg.total_steps) return 0.0;
    const double progress =
        static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.warmup_end * std::pow(1.0 - progress, cfg.poly_power);
}

void AdamWConfig::validate() const {
    check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::InvalidConfig, "adamw: betas must be in [0, 1)");
    check(eps > 0.0, ErrorCode::InvalidConfig, "adamw: eps must be positive");
    check(weight_decay >= 0.0, ErrorCode::InvalidConfig, "adamw: weight_decay must be >= 0");
}

OptimizerState make_optimizer_state(const std::vector<Tensor>& params, const AdamWConfig& hp) {
    hp.validate();
    OptimizerState s;
    s.hp = hp;
    for (const Tensor& p : params) {
        s.m.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
        s.v.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
    return s;
}

void adamw_step(std::vector<Tensor>& params, const std::vector<std::span<const float>>& grads, OptimizerState& state,
                double lr) {
    check(grads.size() == params.size() && state.m.size() == params.size(), ErrorCode::ShapeMismatch,
          "adamw: parameter, gradient and state counts differ");
    check(lr >= 0.0 && std::isfinite(lr), ErrorCode::InvalidArgument, "adamw: bad learning rate");
    const AdamWConfig& hp = state.hp;
    ++state.step;
    const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
    // Bias corrections fold into the step size and the denominator scale.
    const auto decay = static_cast<float>(1.0 - lr * hp.weight_decay);
    const auto step_size = static_cast<float>(lr / c1);
    const auto inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
    const auto b1 = static_cast<float>(hp.beta1), b2 = static_cast<float>(hp.beta2), eps = static_cast<float>(hp.eps);
    for (size_t i = 0; i < params.size(); ++i) {
        const size_t n = static_cast<size_t>(params[i].numel());
        check(grads[i].empty() || grads[i].size() == n, ErrorCode::ShapeMismatch,
              "adamw: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) + " elements, parameter has " +
                  std::to_string(n));
        check(state.m[i].size() == n && state.v[i].size() == n, ErrorCode::ShapeMismatch, "adamw: moment buffer size differs");
        float* p = params[i].ptr();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        const float* g = grads[i].empty() ? nullptr : grads[i].data();
        for (size_t k = 0; k < n; ++k) {
            const float gk = g ? g[k] : 0.0f;
            m[k] = b1 * m[k] + (1.0f - b1) * gk;
            v[k] = b2 * v[k] + (1.0f - b2) * gk * gk;
            p[k] = p[k] * decay - step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
        }
    }
}

void adamw_step(std::vector<Tensor>& params, OptimizerState& state, double lr) {
    std::vector<std::span<const float>> grads;
    grads.reserve(params.size());
    for (const Tensor& p : params) grads.push_back(p.grad());
    adamw_step(params, grads, state, lr);
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) { check(ok, ErrorCode::InvalidConfig, "train: " + msg); };
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(train_samples >= 1 && eval_samples >= 1, "sample counts must be >= 1");
    require(eval_every >= 1, "eval_every must be >= 1");
    require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
    require(stop_after >= 0, "stop_after must be >= 0");
    require(warmup_fraction >= 0.0 && warmup_fraction < 1.0, "warmup_fraction must be in [0, 1)");
    optimizer.validate();
    dice.validate();
}

namespace {

nlohmann::json dice_fields(const DiceScore& d) { return {{"dice_per_class", d.per_class}, {"mean_dice", d.mean_foreground}}; }

// Gradients accumulate across backward calls, so they are dropped after each update.
void clear_grads(std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace

nlohmann::json to_json(const EpochRecord& r) {
    nlohmann::json j{{"epoch", r.epoch}, {"step", r.step}, {"lr", r.lr}, {"loss", r.loss}};
    if (r.eval) {
        j.update(dice_fields(r.eval->dice));
        j["eval_loss"] = r.eval->loss;
    } else {
        j["dice_per_class"] = nullptr;
        j["mean_dice"] = nullptr;
    }
    j["wall_ms"] = r.wall_ms;
    return j;
}

std::vector<VolumeSample> generate_split(const SynthConfig& cfg, int64_t first_index, int64_t count) {
    std::vector<VolumeSample> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) out.push_back(generate(cfg, first_index + i));
    return out;
}

EvalResult evaluate(const SegFormer3D& model, const std::vector<VolumeSample>& samples, int batch_size, const SoftDiceConfig& dice) {
    check(!samples.empty(), ErrorCode::InvalidArgument, "evaluate: no samples");
    check(batch_size >= 1, ErrorCode::InvalidArgument, "evaluate: batch_size must be >= 1");
    NoGradGuard no_grad;
    const int k = model.config().num_classes;
    const Shape& ms = samples.front().mask.shape;
    const int64_t per = shape_numel(ms);
    IntTensor pred({static_cast<int64_t>(samples.size()), ms[0], ms[1], ms[2]});
    IntTensor truth(pred.shape);
    double loss_sum = 0.0;
    for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
        auto [image, mask] = make_batch({samples.begin() + static_cast<long>(start), samples.begin() + static_cast<long>(end)});
        const Tensor logits = model.forward(image);
        loss_sum += static_cast<double>(dice_ce_loss(logits, mask, dice).item()) * static_cast<double>(end - start);
        const IntTensor labels = argmax_labels(logits);
        std::copy(labels.data.begin(), labels.data.end(), pred.data.begin() + static_cast<long>(start) * per);
        std::copy(mask.data.begin(), mask.data.end(), truth.data.begin() + static_cast<long>(start) * per);
    }
    return {loss_sum / static_cast<double>(samples.size()), dice_score(pred, truth, k)};
}

TrainResult train(const ModelConfig& model_cfg, const SynthConfig& data_cfg, ScheduleConfig sched, const TrainConfig& cfg,
                  SegFormer3D* trained, const EpochCallback& on_epoch) {
    model_cfg.validate();
    data_cfg.validate();
    cfg.validate();
    check(data_cfg.modalities == model_cfg.in_channels, ErrorCode::InvalidConfig, "data modalities must equal model in_channels");
    check(data_cfg.num_classes == model_cfg.num_classes, ErrorCode::InvalidConfig, "data classes must equal model num_classes");

    std::vector<VolumeSample> train_set =
        cfg.train_dir.empty() ? generate_split(data_cfg, 0, cfg.train_samples) : load_dataset(cfg.train_dir);
    const std::vector<VolumeSample> eval_set =
        cfg.eval_dir.empty() ? generate_split(data_cfg, cfg.train_samples, cfg.eval_samples) : load_dataset(cfg.eval_dir);

    const int64_t steps_per_epoch = (static_cast<int64_t>(train_set.size()) + cfg.batch_size - 1) / cfg.batch_size;
    if (sched.total_steps == 0) {
        sched.total_steps = steps_per_epoch * cfg.epochs;
        sched.warmup_steps = std::llround(cfg.warmup_fraction * static_cast<double>(sched.total_steps));
    }
    sched.validate();

    SegFormer3D model(model_cfg, cfg.seed);
    std::vector<Tensor> params = model.parameters();
    OptimizerState opt = make_optimizer_state(params, cfg.optimizer);
    std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dULL);

    std::ofstream log;
    if (!cfg.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(cfg.out_dir, ec);
        check(!ec, ErrorCode::IoError, "cannot create " + cfg.out_dir.string() + ": " + ec.message());
        std::ofstream run(cfg.out_dir / "run.json");
        check(run.good(), ErrorCode::IoError, "cannot write " + (cfg.out_dir / "run.json").string());
        run << nlohmann::json{{"model", to_json(model_cfg)},
                              {"data", to_json(data_cfg)},
                              {"schedule",
                               {{"warmup_start", sched.warmup_start},
                                {"warmup_end", sched.warmup_end},
                                {"warmup_steps", sched.warmup_steps},
                                {"total_steps", sched.total_steps},
                                {"poly_power", sched.poly_power},
                                {"constant_lr", sched.constant_lr ? nlohmann::json(*sched.constant_lr) : nlohmann::json()}}},
                              {"epochs", cfg.epochs},
                              {"batch_size", cfg.batch_size},
                              {"seed", cfg.seed}}
                   .dump(2)
            << '\n';
        log.open(cfg.out_dir / "metrics.jsonl");
        check(log.good(), ErrorCode::IoError, "cannot write " + (cfg.out_dir / "metrics.jsonl").string());
    }

    TrainResult result;
    std::vector<size_t> order(train_set.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0, lr = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<VolumeSample> batch;
            for (size_t i = start; i < std::min(order.size(), start + static_cast<size_t>(cfg.batch_size)); ++i)
                batch.push_back(cfg.augment ? augment(train_set[order[i]], rng) : train_set[order[i]]);
            auto [image, mask] = make_batch(batch);
            Tensor loss = dice_ce_loss(model.forward(image), mask, cfg.dice);
            const float value = loss.item();
            check(std::isfinite(value), ErrorCode::NonFiniteLoss,
                  "loss is " + std::to_string(value) + " at epoch " + std::to_string(epoch) + ", step " + std::to_string(result.steps));
            backward(loss);
            lr = lr_at(result.steps, sched);
            adamw_step(params, opt, lr);
            clear_grads(params);
            ++result.steps;
            loss_sum += value;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.step = result.steps;
        rec.lr = lr;
        rec.loss = loss_sum / static_cast<double>(steps_per_epoch);
        const bool last = epoch + 1 == cfg.epochs;
        if (last || (epoch + 1) % cfg.eval_every == 0) rec.eval = evaluate(model, eval_set, cfg.batch_size, cfg.dice);
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (log.is_open()) {
            log << to_json(rec).dump() << '\n';
            log.flush();
        }
        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && !last) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%04d", epoch + 1);
            save_checkpoint(model, result.steps, cfg.out_dir / "checkpoints" / name);
        }
        if (on_epoch) on_epoch(rec);
        if (last) result.final_eval = *rec.eval;
        result.log.push_back(std::move(rec));
        if (cfg.stop_after > 0 && epoch + 1 == cfg.stop_after) break;
    }
    if (!cfg.out_dir.empty()) save_checkpoint(model, result.steps, cfg.out_dir / "checkpoints" / "final");
    if (trained) *trained = std::move(model);
    return result;
}

}  // namespace sf3d
