#include <cmath>

#include "doctest.h"
#include "ref64.hpp"

using namespace sf3d;
using ref64::T64;

namespace {

double max_abs_diff(const Tensor& a, const T64& b) {
    REQUIRE(a.shape() == b.shape);
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data()[static_cast<size_t>(i)] - b[i]));
    return m;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.in_channels = 2;
    cfg.num_classes = 3;
    cfg.widths = {2, 4, 6, 8};
    cfg.depths = {1, 1, 1, 1};
    cfg.heads = {1, 2, 2, 2};
    cfg.stage_reductions = {2, 1, 1, 1};
    cfg.decoder_width = 4;
    cfg.ffn_expansion = 2;
    return cfg;
}

// Replaces every zero-initialised bias and unit norm with random values so
// the oracle comparisons exercise all terms.
void randomise(ModelWeights& w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    for_each_parameter(w, [&](const std::string& name, Tensor& t) {
        if (name.ends_with("bias") || name.ends_with("beta")) t = Tensor::randn(t.shape(), rng, 0.1f);
        else if (name.ends_with("gamma")) t = Tensor::uniform(t.shape(), rng, 0.5f, 1.5f);
        else t = Tensor::randn(t.shape(), rng, 0.5f);
    });
}

template <typename Fn>
ErrorCode error_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode{};
}

}  // namespace

TEST_SUITE("model config") {
    TEST_CASE("reference stage geometry") {
        ModelConfig cfg = ModelConfig::reference();
        CHECK(cfg.stage_scale(0) == 4);
        CHECK(cfg.stage_scale(3) == 32);
        CHECK(cfg.sequence_reduction(0) == 64);
        CHECK(cfg.sequence_reduction(1) == 8);
        CHECK(cfg.sequence_reduction(2) == 1);
        for (int i = 0; i < kNumStages; ++i) CHECK(cfg.patch_config(i).overlapping());
    }

    TEST_CASE("json round trip and unknown keys") {
        ModelConfig cfg = tiny_config();
        ModelConfig back = model_config_from_json(to_json(cfg));
        CHECK(to_json(back) == to_json(cfg));
        nlohmann::json j = to_json(cfg);
        j["widthz"] = 3;
        CHECK(error_of([&] { model_config_from_json(j); }) == ErrorCode::InvalidConfig);
    }

    TEST_CASE("invalid configs") {
        ModelConfig cfg;
        cfg.widths = {32, 32, 160, 256};
        CHECK(error_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
        cfg = ModelConfig{};
        cfg.heads[2] = 3;
        CHECK(error_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
        cfg = ModelConfig{};
        cfg.stage_reductions[0] = 0;
        CHECK(error_of([&] { cfg.validate(); }) == ErrorCode::InvalidConfig);
    }
}

TEST_SUITE("model") {
    TEST_CASE("64 cube gives the 16/8/4/2 ladder") {
        ModelConfig cfg = ModelConfig::reference();
        ModelWeights w = init_model_weights(cfg, 1);
        NoGradGuard no_grad;
        StageFeatures f = encoder_forward(Tensor::zeros({1, 4, 64, 64, 64}), cfg, w);
        for (size_t i = 0; i < kNumStages; ++i) {
            const int64_t side = 16 >> i;
            CHECK(f.maps[i].shape() == Shape{1, cfg.widths[i], side, side, side});
        }
    }

    TEST_CASE("extents must divide by 32") {
        ModelConfig cfg = tiny_config();
        ModelWeights w = init_model_weights(cfg, 1);
        CHECK(error_of([&] { forward(Tensor::zeros({1, 2, 32, 32, 48 + 8}), cfg, w); }) == ErrorCode::IndivisibleExtent);
        CHECK(error_of([&] { forward(Tensor::zeros({1, 3, 32, 32, 32}), cfg, w); }) == ErrorCode::ShapeMismatch);
    }

    TEST_CASE("tiny encoder and decoder against the composed oracle") {
        ModelConfig cfg = tiny_config();
        ModelWeights w = init_model_weights(cfg, 2);
        randomise(w, 3);
        std::mt19937_64 rng(4);
        Tensor x = Tensor::randn({1, 2, 32, 32, 32}, rng);
        StageFeatures f = encoder_forward(x, cfg, w);
        std::vector<T64> f64 = ref64::encoder(ref64::d(x), cfg, w);
        for (size_t i = 0; i < kNumStages; ++i) CHECK(max_abs_diff(f.maps[i], f64[i]) <= 1e-4);

        // Decoder alone, from identical float64 features.
        StageFeatures same;
        for (size_t i = 0; i < kNumStages; ++i) {
            same.maps[i] = Tensor(f.maps[i].shape());
            for (int64_t j = 0; j < f.maps[i].numel(); ++j) same.maps[i].data()[size_t(j)] = static_cast<float>(f64[i][j]);
            f64[i] = ref64::d(same.maps[i]);
        }
        Tensor logits = decoder_forward(same, cfg, w.decoder);
        CHECK(logits.shape() == Shape{1, 3, 32, 32, 32});
        CHECK(max_abs_diff(logits, ref64::decoder(f64, cfg, w.decoder)) <= 1e-5);
    }

    TEST_CASE("zero fusion weights give zero logits") {
        ModelConfig cfg = tiny_config();
        ModelWeights w = init_model_weights(cfg, 5);
        w.decoder.fuse_weight = Tensor::zeros(w.decoder.fuse_weight.shape());
        w.decoder.fuse_bias = Tensor::zeros(w.decoder.fuse_bias.shape());
        w.decoder.head_bias = Tensor::zeros(w.decoder.head_bias.shape());
        std::mt19937_64 rng(6);
        Tensor y = forward(Tensor::randn({1, 2, 32, 32, 32}, rng), cfg, w);
        for (float v : y.data()) CHECK(v == 0.0f);
    }

    TEST_CASE("reference model end to end shape and determinism") {
        SegFormer3D model(ModelConfig::reference(), 7);
        std::mt19937_64 rng(8);
        Tensor x = Tensor::randn({1, 4, 32, 32, 32}, rng);
        NoGradGuard no_grad;
        Tensor a = model.forward(x), b = model.forward(x);
        CHECK(a.shape() == Shape{1, 4, 32, 32, 32});
        CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    }

    TEST_CASE("one weight set runs 32 and 64 cubes") {
        SegFormer3D model(ModelConfig::reference(), 9);
        NoGradGuard no_grad;
        for (int64_t side : {32, 64}) {
            Tensor y = model.forward(Tensor::full({1, 4, side, side, side}, 0.3f));
            CHECK(y.shape() == Shape{1, 4, side, side, side});
            CHECK(std::all_of(y.data().begin(), y.data().end(), [](float v) { return std::isfinite(v); }));
        }
    }

    TEST_CASE("end-to-end gradient of mean logits") {
        // Two-channel layer norms are nearly sign functions, so this check
        // uses slightly wider stages.
        ModelConfig cfg = tiny_config();
        cfg.widths = {4, 8, 12, 16};
        cfg.heads = {1, 2, 3, 4};
        ModelWeights w = init_model_weights(cfg, 10);
        randomise(w, 11);
        std::mt19937_64 rng(12);
        Tensor x = Tensor::randn({1, 2, 32, 32, 32}, rng);
        std::vector<Tensor> subset{w.stages[0].embed.weight, w.stages[0].blocks[0].attn.key_reduce.weight,
                                   w.stages[1].blocks[0].ffn.dw_weight, w.stages[3].norm.gamma,
                                   w.decoder.project_weight[2], w.decoder.fuse_bias, w.decoder.head_weight};
        auto r = ref64::check_gradients(
            subset, [&] { return mean(forward(x, cfg, w)); },
            [&] {
                T64 y = ref64::forward(ref64::d(x), cfg, w), m({1});
                for (double v : y.v) m[0] += v / static_cast<double>(y.numel());
                return m;
            },
            13, 6);
        CHECK_MESSAGE(r.max_rel <= 1e-3, "leaf ", r.worst_leaf, "[", r.worst_index, "] analytic ", r.worst_analytic,
                      " numeric ", r.worst_numeric);
    }

    TEST_CASE("parameter enumeration is stable and named") {
        ModelWeights w = init_model_weights(tiny_config(), 14);
        std::vector<std::string> names;
        for_each_parameter(w, [&](const std::string& n, const Tensor&) { names.push_back(n); });
        CHECK(names.front() == "encoder.stage1.patch_embed.weight");
        CHECK(names.back() == "decoder.head.bias");
        CHECK(std::find(names.begin(), names.end(), "encoder.stage1.block0.attn.key_reduce.weight") != names.end());
        CHECK(std::find(names.begin(), names.end(), "encoder.stage2.block0.attn.key_reduce.weight") == names.end());
        int64_t total = 0;
        for_each_parameter(w, [&](const std::string&, const Tensor& t) { total += t.numel(); });
        CHECK(parameter_count(w) == total);
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("save and load reproduce weights, config and step") {
        const auto dir = std::filesystem::temp_directory_path() / "sf3d_ckpt_test";
        std::filesystem::remove_all(dir);
        SegFormer3D model(tiny_config(), 15);
        save_checkpoint(model, 42, dir);
        int64_t step = 0;
        SegFormer3D back = load_checkpoint(dir, &step);
        CHECK(step == 42);
        CHECK(to_json(back.config()) == to_json(model.config()));
        std::vector<Tensor> a = model.parameters(), b = back.parameters();
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) CHECK(std::equal(a[i].data().begin(), a[i].data().end(), b[i].data().begin()));

        std::filesystem::remove(dir / "weights" / "decoder.fuse.bias.bin");
        CHECK(error_of([&] { load_checkpoint(dir); }) == ErrorCode::IoError);
        std::filesystem::remove_all(dir);
    }
}
