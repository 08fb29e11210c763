#include <chrono>
#include <cstring>
#include <filesystem>
#include <new>

#include "sf3d/profiler.hpp"
#include "sf3d/run_config.hpp"
#include "sf3d/sf3d.h"

struct sf3d_config {
    sf3d::RunConfig cfg;
};

struct sf3d_model {
    sf3d::SegFormer3D model;
    int64_t step = 0;  // from the checkpoint, 0 for fresh models
};

static_assert(static_cast<int>(sf3d::ErrorCode::InvalidArgument) == SF3D_ERR_INVALID_ARGUMENT);
static_assert(static_cast<int>(sf3d::ErrorCode::InvalidConfig) == SF3D_ERR_INVALID_CONFIG);

namespace {

thread_local std::string last_error;

template <typename Fn>
sf3d_status guarded(Fn&& fn) {
    try {
        fn();
        last_error.clear();
        return SF3D_OK;
    } catch (const sf3d::Error& e) {
        last_error = e.what();
        return static_cast<sf3d_status>(e.code());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
    } catch (const std::exception& e) {
        last_error = e.what();
    }
    return SF3D_ERR_INTERNAL;
}

void require(bool ok, const char* what) { sf3d::check(ok, sf3d::ErrorCode::InvalidArgument, what); }

char* copy_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

nlohmann::json eval_json(const sf3d::EvalResult& r) {
    return {{"loss", r.loss}, {"dice_per_class", r.dice.per_class}, {"mean_dice", r.dice.mean_foreground}};
}

}  // namespace

extern "C" {

const char* sf3d_version(void) { return "0.1.0"; }

const char* sf3d_status_name(sf3d_status status) {
    if (status == SF3D_OK) return "Ok";
    if (status == SF3D_ERR_INTERNAL) return "Internal";
    if (status >= SF3D_ERR_INVALID_ARGUMENT && status <= SF3D_ERR_INVALID_CONFIG)
        return sf3d::error_code_name(static_cast<sf3d::ErrorCode>(status));
    return "Unknown";
}

const char* sf3d_last_error(void) { return last_error.c_str(); }

void sf3d_string_free(char* s) { std::free(s); }

sf3d_status sf3d_config_default(sf3d_config** out) {
    return guarded([&] {
        require(out != nullptr, "null output handle");
        *out = new sf3d_config{sf3d::default_run_config()};
    });
}

sf3d_status sf3d_config_load(const char* path, sf3d_config** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "null argument");
        *out = new sf3d_config{sf3d::load_run_config(path)};
    });
}

sf3d_status sf3d_config_set(sf3d_config* cfg, const char* assignment) {
    return guarded([&] {
        require(cfg != nullptr && assignment != nullptr, "null argument");
        sf3d::apply_override(cfg->cfg, assignment);
    });
}

sf3d_status sf3d_config_to_json(const sf3d_config* cfg, char** json) {
    return guarded([&] {
        require(cfg != nullptr && json != nullptr, "null argument");
        *json = copy_string(sf3d::to_flat_json(cfg->cfg).dump(2));
    });
}

sf3d_status sf3d_config_validate(const sf3d_config* cfg) {
    return guarded([&] {
        require(cfg != nullptr, "null config");
        cfg->cfg.validate();
    });
}

void sf3d_config_free(sf3d_config* cfg) { delete cfg; }

sf3d_status sf3d_generate_dataset(const sf3d_config* cfg, const char* dir, int64_t first_index, int64_t count) {
    return guarded([&] {
        require(cfg != nullptr && dir != nullptr, "null argument");
        cfg->cfg.validate();
        sf3d::write_dataset(cfg->cfg.data, first_index, count, dir);
    });
}

sf3d_status sf3d_train(const sf3d_config* cfg, sf3d_epoch_fn on_epoch, void* user, char** summary) {
    return guarded([&] {
        require(cfg != nullptr, "null config");
        const sf3d::RunConfig& rc = cfg->cfg;
        rc.validate();
        sf3d::EpochCallback cb;
        if (on_epoch) cb = [&](const sf3d::EpochRecord& r) { on_epoch(sf3d::to_json(r).dump().c_str(), user); };
        const sf3d::TrainResult r = sf3d::train(rc.model, rc.data, rc.schedule, rc.train, nullptr, cb);
        if (summary)
            *summary = copy_string(
                nlohmann::json{{"steps", r.steps}, {"final", eval_json(r.final_eval)}, {"out_dir", rc.train.out_dir.string()}}.dump());
    });
}

sf3d_status sf3d_model_create(const sf3d_config* cfg, uint64_t seed, sf3d_model** out) {
    return guarded([&] {
        require(cfg != nullptr && out != nullptr, "null argument");
        cfg->cfg.validate();
        *out = new sf3d_model{sf3d::SegFormer3D(cfg->cfg.model, seed), 0};
    });
}

sf3d_status sf3d_model_load(const char* checkpoint_dir, sf3d_model** out) {
    return guarded([&] {
        require(checkpoint_dir != nullptr && out != nullptr, "null argument");
        int64_t step = 0;
        sf3d::SegFormer3D model = sf3d::load_checkpoint(checkpoint_dir, &step);
        *out = new sf3d_model{std::move(model), step};
    });
}

sf3d_status sf3d_model_save(const sf3d_model* model, int64_t step, const char* checkpoint_dir) {
    return guarded([&] {
        require(model != nullptr && checkpoint_dir != nullptr, "null argument");
        sf3d::save_checkpoint(model->model, step, checkpoint_dir);
    });
}

int64_t sf3d_model_step(const sf3d_model* model) { return model ? model->step : -1; }

int64_t sf3d_model_num_parameters(const sf3d_model* model) { return model ? model->model.num_parameters() : -1; }

int sf3d_model_num_classes(const sf3d_model* model) { return model ? model->model.config().num_classes : -1; }

sf3d_status sf3d_model_forward(const sf3d_model* model, const float* input, const int64_t shape[5], float* logits,
                               size_t logits_len) {
    return guarded([&] {
        require(model != nullptr && input != nullptr && shape != nullptr && logits != nullptr, "null argument");
        const sf3d::Shape s(shape, shape + 5);
        for (int64_t d : s) sf3d::check(d > 0, sf3d::ErrorCode::ShapeMismatch, "input extents must be positive");
        const auto n = static_cast<size_t>(sf3d::shape_numel(s));
        sf3d::NoGradGuard no_grad;
        const sf3d::Tensor out = model->model.forward(sf3d::Tensor(s, sf3d::FloatBuffer(input, input + n)));
        sf3d::check(static_cast<size_t>(out.numel()) <= logits_len, sf3d::ErrorCode::ShapeMismatch,
                    "logits buffer holds " + std::to_string(logits_len) + " floats, need " + std::to_string(out.numel()));
        std::memcpy(logits, out.ptr(), static_cast<size_t>(out.numel()) * sizeof(float));
    });
}

sf3d_status sf3d_model_evaluate(const sf3d_model* model, const char* data_dir, int batch_size, char** result) {
    return guarded([&] {
        require(model != nullptr && data_dir != nullptr && result != nullptr, "null argument");
        const std::vector<sf3d::VolumeSample> samples = sf3d::load_dataset(data_dir);
        for (const sf3d::VolumeSample& s : samples)
            sf3d::check(s.num_classes == model->model.config().num_classes, sf3d::ErrorCode::InvalidConfig,
                        "dataset has " + std::to_string(s.num_classes) + " classes, model has " +
                            std::to_string(model->model.config().num_classes));
        const auto t0 = std::chrono::steady_clock::now();
        const sf3d::EvalResult r = sf3d::evaluate(model->model, samples, batch_size);
        const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        // Same keys as a metrics-log line, so the two diff cleanly.
        nlohmann::json j = eval_json(r);
        j["eval_loss"] = r.loss;
        j["epoch"] = nullptr;
        j["step"] = model->step;
        j["lr"] = nullptr;
        j["wall_ms"] = wall_ms;
        j["samples"] = samples.size();
        *result = copy_string(j.dump());
    });
}

void sf3d_model_free(sf3d_model* model) { delete model; }

sf3d_status sf3d_profile(const sf3d_config* cfg, const int64_t shape[5], char** report_json, char** table) {
    return guarded([&] {
        require(cfg != nullptr && shape != nullptr, "null argument");
        cfg->cfg.validate();
        const sf3d::ProfileReport r = sf3d::count_flops(cfg->cfg.model, sf3d::Shape(shape, shape + 5));
        std::string json = report_json ? sf3d::to_json(r).dump(2) : std::string();
        std::string text = table ? sf3d::format_table(r) : std::string();
        if (report_json) *report_json = copy_string(json);
        if (table) *table = copy_string(text);
    });
}

sf3d_status sf3d_bench_attention(int64_t n, int64_t channels, int heads, int64_t reduction, int repeats, uint64_t seed,
                                 sf3d_attn_bench* out) {
    return guarded([&] {
        require(out != nullptr, "null output");
        const sf3d::AttentionBench b = sf3d::bench_attention(n, channels, heads, reduction, repeats, seed);
        *out = {b.n, b.channels, b.heads, b.reduction, b.score_flops.total(), b.layer_flops, b.score_ms, b.layer_ms};
    });
}

}  // extern "C"
