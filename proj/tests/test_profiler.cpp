#include "doctest.h"
#include "sf3d/profiler.hpp"

using namespace sf3d;

namespace {

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

uint64_t module_flops(const ProfileReport& r, const std::string& prefix) {
    uint64_t total = 0;
    for (const ModuleCost& m : r.modules)
        if (m.name.rfind(prefix, 0) == 0) total += m.flops;
    return total;
}

}  // namespace

TEST_SUITE("profiler") {
    TEST_CASE("closed forms") {
        CHECK(linear_params(160, 256) == 41216);
        CHECK(conv3d_params(4, 32, 7) == 32 * 4 * 343 + 32);
        CHECK(conv3d_params(128, 128, 3, 128) == 128 * 27 + 128);
    }

    TEST_CASE("reference budget") {
        ProfileReport r = count_flops(ModelConfig::reference(), {1, 4, 128, 128, 128});
        // Frozen from an independent closed-form evaluation of the same architecture.
        CHECK(r.total_params == 4448132);
        CHECK(r.total_flops == 19124428800ull);
        CHECK(r.total_params >= 4300000);
        CHECK(r.total_params <= 4700000);
        CHECK(r.total_flops >= 15000000000ull);
        CHECK(r.total_flops <= 20000000000ull);
        CHECK(count_flops(ModelConfig::reference(), {1, 4, 32, 32, 32}).total_flops == 206835168ull);
    }

    TEST_CASE("totals equal the breakdown") {
        ProfileReport r = count_flops(ModelConfig::reference(), {2, 4, 64, 64, 64});
        int64_t p = 0;
        uint64_t f = 0, m = 0;
        for (const ModuleCost& c : r.modules) {
            p += c.params;
            f += c.flops;
            m += c.macs;
        }
        CHECK(p == r.total_params);
        CHECK(f == r.total_flops);
        CHECK(m == r.total_macs);
    }

    TEST_CASE("parameter count matches enumerated weights") {
        for (const ModelConfig& cfg : {tiny_config(), ModelConfig::reference()})
            CHECK(count_params(cfg).total_params == parameter_count(init_model_weights(cfg, 1)));
        ModelConfig no_bias = tiny_config();
        no_bias.attention_bias = false;
        CHECK(count_params(no_bias).total_params == parameter_count(init_model_weights(no_bias, 1)));
    }

    TEST_CASE("flop count matches an instrumented forward pass") {
        for (const ModelConfig& cfg : {tiny_config(), ModelConfig::reference()}) {
            const Shape shape{2, cfg.in_channels, 32, 64, 32};
            ModelWeights w = init_model_weights(cfg, 2);
            NoGradGuard no_grad;
            FlopCounter counter;
            forward(Tensor::zeros(shape), cfg, w);
            CHECK(counter.total() == count_flops(cfg, shape).total_flops);
        }
    }

    TEST_CASE("score flops shrink by exactly R") {
        const auto full = attention_score_flops(32768, 32, 1), quarter = attention_score_flops(32768, 32, 4);
        CHECK(full.qk == 4 * quarter.qk);
        CHECK(full.av == 4 * quarter.av);
        CHECK(full.qk == 2ull * 32768 * 32768 * 32);
        CHECK(attention_score_flops(4096, 32, 2).qk * 2 == attention_score_flops(4096, 32, 1).qk);
        CHECK_THROWS_AS(attention_score_flops(10, 4, 3), Error);
    }

    TEST_CASE("doubling every extent") {
        ModelConfig cfg = ModelConfig::reference();
        ProfileReport a = count_flops(cfg, {1, 4, 32, 32, 32}), b = count_flops(cfg, {1, 4, 64, 64, 64});
        CHECK(module_flops(b, "encoder.stage1.patch_embed") == 8 * module_flops(a, "encoder.stage1.patch_embed"));
        CHECK(module_flops(b, "decoder") == 8 * module_flops(a, "decoder"));
        const auto sa = attention_score_flops(512, 32, 64), sb = attention_score_flops(4096, 32, 64);
        CHECK(sb.total() == 64 * sa.total());
        CHECK(a.total_params == b.total_params);
    }

    TEST_CASE("rejects indivisible extents") {
        try {
            count_flops(ModelConfig::reference(), {1, 4, 32, 32, 40});
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::IndivisibleExtent);
        }
    }

    TEST_CASE("report renders") {
        ProfileReport r = count_flops(ModelConfig::reference(), {1, 4, 128, 128, 128});
        nlohmann::json j = to_json(r);
        CHECK(j["total_params"] == 4448132);
        CHECK(j["counting_convention"].get<std::string>().find("multiply-add = 2 FLOPs") != std::string::npos);
        const std::string table = format_table(r);
        CHECK(table.find("decoder.head") != std::string::npos);
        CHECK(table.find("19,124,428,800") != std::string::npos);
    }
}
