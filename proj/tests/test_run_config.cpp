#include <cstdlib>
#include <filesystem>

#include "doctest.h"
#include "sf3d/profiler.hpp"
#include "sf3d/run_config.hpp"

using namespace sf3d;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode{};
}

const std::filesystem::path kConfigs = std::filesystem::path(SF3D_SOURCE_DIR) / "configs";

}  // namespace

TEST_SUITE("run_config") {
    TEST_CASE("flat form round trips") {
        const RunConfig base = default_run_config();
        const nlohmann::json flat = to_flat_json(base);
        CHECK(flat.contains("model.widths"));
        CHECK(flat.contains("data.noise_sigma"));
        CHECK(flat.contains("schedule.constant_lr"));
        CHECK(to_flat_json(run_config_from_json(flat)) == flat);
    }

    TEST_CASE("unknown keys are rejected") {
        CHECK(code_of([] { run_config_from_json({{"train.epoch", 3}}); }) == ErrorCode::InvalidConfig);
        CHECK(code_of([] { run_config_from_json({{"model", {{"width", 3}}}}); }) == ErrorCode::InvalidConfig);
        CHECK(code_of([] { run_config_from_json({{"seeds", 3}}); }) == ErrorCode::InvalidConfig);
    }

    TEST_CASE("nested objects flatten to dotted keys") {
        const RunConfig cfg = run_config_from_json({{"train", {{"epochs", 7}}}, {"model", {{"decoder_width", 64}}}});
        CHECK(cfg.train.epochs == 7);
        CHECK(cfg.model.decoder_width == 64);
    }

    TEST_CASE("overrides") {
        RunConfig cfg = default_run_config();
        apply_override(cfg, "train.epochs=5");
        apply_override(cfg, "model.widths=[8,16,24,32]");
        apply_override(cfg, "model.heads=[1,1,1,1]");
        apply_override(cfg, "paths.out_dir=/tmp/some where");
        apply_override(cfg, "schedule.constant_lr=3e-5");
        CHECK(cfg.train.epochs == 5);
        CHECK(cfg.model.widths[3] == 32);
        CHECK(cfg.train.out_dir == "/tmp/some where");
        REQUIRE(cfg.schedule.constant_lr.has_value());
        CHECK(*cfg.schedule.constant_lr == 3e-5);
        apply_override(cfg, "schedule.constant_lr=null");
        CHECK_FALSE(cfg.schedule.constant_lr.has_value());
        CHECK(code_of([&] { apply_override(cfg, "train.epochs"); }) == ErrorCode::InvalidConfig);
        CHECK(code_of([&] { apply_override(cfg, "train.epochs=many"); }) == ErrorCode::InvalidConfig);
        CHECK_NOTHROW(cfg.validate());
        // Range checks wait for validate(), so overrides can pass through invalid states.
        apply_override(cfg, "model.widths=[8,16,24,20]");
        CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
        apply_override(cfg, "model.widths=[8,16,24,32]");
        CHECK(code_of([&] { apply_override(cfg, "bogus=1"); }) == ErrorCode::InvalidConfig);
        // A failed override leaves the config untouched.
        CHECK(cfg.train.epochs == 5);
    }

    TEST_CASE("cross-field validation") {
        CHECK(code_of([] { run_config_from_json({{"data.modalities", 3}}); }) == ErrorCode::InvalidConfig);
        CHECK(code_of([] { run_config_from_json({{"data.num_classes", 3}}); }) == ErrorCode::InvalidConfig);
        CHECK(code_of([] { run_config_from_json({{"model.heads", {1, 2, 3, 8}}}); }) == ErrorCode::InvalidConfig);
        CHECK(code_of([] { run_config_from_json({{"schedule.warmup_start", 1.0}}); }) == ErrorCode::InvalidConfig);
        CHECK(code_of([] { run_config_from_json({{"schedule.warmup_fraction", 1.0}}); }) == ErrorCode::InvalidConfig);
    }

    TEST_CASE("output directory from the environment") {
        ::setenv("SF3D_OUTPUT_DIR", "/tmp/sf3d_env_out", 1);
        CHECK(default_run_config().train.out_dir == "/tmp/sf3d_env_out");
        ::unsetenv("SF3D_OUTPUT_DIR");
        CHECK(default_run_config().train.out_dir == "runs");
    }

    TEST_CASE("shipped configs load") {
        const RunConfig ref = load_run_config(kConfigs / "reference.json");
        CHECK(count_params(ref.model).total_params == 4448132);
        CHECK(ref.train.epochs == 200);
        CHECK(ref.train.batch_size == 4);
        const RunConfig tiny = load_run_config(kConfigs / "tiny.json");
        CHECK(tiny.model.widths[0] == 8);
        CHECK(code_of([] { load_run_config("/nonexistent/cfg.json"); }) == ErrorCode::IoError);
    }
}
