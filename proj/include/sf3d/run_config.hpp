#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "sf3d/trainer.hpp"

namespace sf3d {

/// Everything a CLI run needs. On disk it is a flat JSON object with dotted
/// keys ("model.widths", "train.epochs", "seed", ...); nested objects are
/// accepted and flattened. Keys not listed by to_flat_json are rejected.
struct RunConfig {
    ModelConfig model;
    SynthConfig data;
    ScheduleConfig schedule;  // warmup/total steps are derived at train time
    TrainConfig train;        // train.out_dir doubles as the run output directory

    void validate() const;
};

/// Defaults; the output directory comes from SF3D_OUTPUT_DIR when set, else "runs".
RunConfig default_run_config();
/// Overlays j on base. With `validate` false only keys and value types are
/// checked, so a sequence of overrides may pass through invalid states.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = default_run_config(), bool validate = true);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_flat_json(const RunConfig& cfg);

/// "key=value": value is parsed as JSON when it parses, else taken as a string.
/// Checks the key and the value type only; call validate() before use.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace sf3d
