#include "sf3d/run_config.hpp"

#include <cstdlib>
#include <fstream>

namespace sf3d {

namespace {

void flatten(const nlohmann::json& j, const std::string& prefix, nlohmann::json& out) {
    for (const auto& [key, value] : j.items()) {
        const std::string name = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object()) flatten(value, name, out);
        else out[name] = value;
    }
}

std::string path_string(const std::filesystem::path& p) { return p.string(); }

}  // namespace

void RunConfig::validate() const {
    model.validate();
    data.validate();
    train.validate();
    check(data.modalities == model.in_channels, ErrorCode::InvalidConfig,
          "data.modalities (" + std::to_string(data.modalities) + ") must equal model.in_channels (" +
              std::to_string(model.in_channels) + ")");
    check(data.num_classes == model.num_classes, ErrorCode::InvalidConfig,
          "data.num_classes (" + std::to_string(data.num_classes) + ") must equal model.num_classes (" +
              std::to_string(model.num_classes) + ")");
    try {
        model.check_input_extents(data.extent, data.extent, data.extent);
    } catch (const Error& e) {
        fail(ErrorCode::InvalidConfig, e.what());
    }
    // Step counts are only known at train time; check the rest with a stand-in.
    ScheduleConfig probe = schedule;
    probe.warmup_steps = 0;
    probe.total_steps = 1;
    probe.validate();
}

RunConfig default_run_config() {
    RunConfig cfg;
    const char* env = std::getenv("SF3D_OUTPUT_DIR");
    cfg.train.out_dir = env && *env ? env : "runs";
    return cfg;
}

nlohmann::json to_flat_json(const RunConfig& cfg) {
    nlohmann::json flat = nlohmann::json::object();
    flatten({{"model", to_json(cfg.model)}, {"data", to_json(cfg.data)}}, "", flat);
    const ScheduleConfig& s = cfg.schedule;
    const TrainConfig& t = cfg.train;
    flat["schedule.warmup_start"] = s.warmup_start;
    flat["schedule.warmup_end"] = s.warmup_end;
    flat["schedule.warmup_fraction"] = t.warmup_fraction;
    flat["schedule.poly_power"] = s.poly_power;
    flat["schedule.constant_lr"] = s.constant_lr ? nlohmann::json(*s.constant_lr) : nlohmann::json();
    flat["train.epochs"] = t.epochs;
    flat["train.batch_size"] = t.batch_size;
    flat["train.train_samples"] = t.train_samples;
    flat["train.eval_samples"] = t.eval_samples;
    flat["train.eval_every"] = t.eval_every;
    flat["train.checkpoint_every"] = t.checkpoint_every;
    flat["train.augment"] = t.augment;
    flat["train.weight_decay"] = t.optimizer.weight_decay;
    flat["train.beta1"] = t.optimizer.beta1;
    flat["train.beta2"] = t.optimizer.beta2;
    flat["train.eps"] = t.optimizer.eps;
    flat["train.dice_smooth"] = t.dice.smooth;
    flat["train.include_background"] = t.dice.include_background;
    flat["seed"] = t.seed;
    flat["paths.out_dir"] = path_string(t.out_dir);
    flat["paths.train_dir"] = path_string(t.train_dir);
    flat["paths.eval_dir"] = path_string(t.eval_dir);
    return flat;
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base, bool validate) {
    check(j.is_object(), ErrorCode::InvalidConfig, "run config must be a JSON object");
    nlohmann::json flat = nlohmann::json::object();
    flatten(j, "", flat);
    const nlohmann::json known = to_flat_json(base);
    nlohmann::json model = to_json(base.model), data = to_json(base.data);
    RunConfig cfg = base;
    ScheduleConfig& s = cfg.schedule;
    TrainConfig& t = cfg.train;
    for (const auto& [key, value] : flat.items()) {
        check(known.contains(key), ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
        try {
            if (key.rfind("model.", 0) == 0) model[key.substr(6)] = value;
            else if (key.rfind("data.", 0) == 0) data[key.substr(5)] = value;
            else if (key == "schedule.warmup_start") s.warmup_start = value.get<double>();
            else if (key == "schedule.warmup_end") s.warmup_end = value.get<double>();
            else if (key == "schedule.warmup_fraction") t.warmup_fraction = value.get<double>();
            else if (key == "schedule.poly_power") s.poly_power = value.get<double>();
            else if (key == "schedule.constant_lr") s.constant_lr = value.is_null() ? std::nullopt : std::optional(value.get<double>());
            else if (key == "train.epochs") t.epochs = value.get<int>();
            else if (key == "train.batch_size") t.batch_size = value.get<int>();
            else if (key == "train.train_samples") t.train_samples = value.get<int>();
            else if (key == "train.eval_samples") t.eval_samples = value.get<int>();
            else if (key == "train.eval_every") t.eval_every = value.get<int>();
            else if (key == "train.checkpoint_every") t.checkpoint_every = value.get<int>();
            else if (key == "train.augment") t.augment = value.get<bool>();
            else if (key == "train.weight_decay") t.optimizer.weight_decay = value.get<double>();
            else if (key == "train.beta1") t.optimizer.beta1 = value.get<double>();
            else if (key == "train.beta2") t.optimizer.beta2 = value.get<double>();
            else if (key == "train.eps") t.optimizer.eps = value.get<double>();
            else if (key == "train.dice_smooth") t.dice.smooth = value.get<float>();
            else if (key == "train.include_background") t.dice.include_background = value.get<bool>();
            else if (key == "seed") t.seed = value.get<uint64_t>();
            else if (key == "paths.out_dir") t.out_dir = value.get<std::string>();
            else if (key == "paths.train_dir") t.train_dir = value.get<std::string>();
            else if (key == "paths.eval_dir") t.eval_dir = value.get<std::string>();
        } catch (const nlohmann::json::exception&) {
            fail(ErrorCode::InvalidConfig, "bad value for '" + key + "': " + value.dump());
        }
    }
    cfg.model = model_config_from_json(model, validate);
    cfg.data = synth_config_from_json(data, validate);
    if (validate) cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    check(is.good(), ErrorCode::IoError, "cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    check(eq != std::string::npos && eq > 0, ErrorCode::InvalidConfig, "override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    cfg = run_config_from_json({{key, value}}, cfg, false);
}

}  // namespace sf3d
