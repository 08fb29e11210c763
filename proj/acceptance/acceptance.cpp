// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   sf3d_acceptance [--only N]... [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "ref64.hpp"
#include "sf3d/profiler.hpp"
#include "sf3d/trainer.hpp"

using namespace sf3d;
using ref64::T64;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void note(Outcome& o, bool ok, const std::string& what) {
    if (!ok) o.pass = false;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += (ok ? "" : "FAILED ") + what;
}

bool all_finite(const Tensor& t) {
    for (float v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (size_t i = 0; i < a.data().size(); ++i) m = std::max(m, static_cast<double>(std::fabs(a.data()[i] - b.data()[i])));
    return m;
}

IntTensor labels(Shape shape, const std::vector<int32_t>& v) {
    IntTensor t(std::move(shape));
    t.data.assign(v.begin(), v.end());
    return t;
}

// Logits [1, K, n] with `margin` on each voxel's label and 0 elsewhere.
Tensor peaked(const std::vector<int32_t>& lab, int k, float margin) {
    const auto n = static_cast<int64_t>(lab.size());
    std::vector<float> v(static_cast<size_t>(k * n), 0.0f);
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(lab[static_cast<size_t>(i)] * n + i)] = margin;
    return Tensor({1, k, n, 1, 1}, v);
}

Outcome budget() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    ProfileReport r = count_flops(ModelConfig::reference(), {1, 4, 128, 128, 128});
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    note(o, r.total_params >= 4300000 && r.total_params <= 4700000, fmt("params %lld in [4.30M, 4.70M]", (long long)r.total_params));
    note(o, r.total_flops >= 15000000000ull && r.total_flops <= 20000000000ull,
         fmt("FLOPs %.3fG in [15, 20]G at 1x4x128^3 (multiply-add = 2)", r.total_flops / 1e9));
    note(o, ms < 1000.0, fmt("%.1f ms", ms));
    return o;
}

Outcome complexity() {
    Outcome o;
    const auto r1 = attention_score_flops(32768, 32, 1), r4 = attention_score_flops(32768, 32, 4);
    note(o, r1.total() == 4 * r4.total(), fmt("N=32768 score FLOPs R=1 %llu, R=4 %llu", (unsigned long long)r1.total(),
                                              (unsigned long long)r4.total()));
    std::string times;
    bool monotone = true;
    double prev = 1e300;
    for (int64_t r : {1, 2, 4, 8}) {
        const AttentionBench b = bench_attention(4096, 32, 1, r, 5, 0);
        monotone = monotone && b.score_ms < prev;
        prev = b.score_ms;
        times += fmt("%sR=%lld %.2f ms", times.empty() ? "" : ", ", (long long)r, b.score_ms);
    }
    note(o, monotone, "N=4096 score time decreasing: " + times);
    return o;
}

Outcome reduction_baseline() {
    Outcome o;
    std::mt19937_64 rng(101);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int heads = 1 + trial % 4, c = heads * (1 + trial % 3);
        const int64_t n = 2 + 3 * trial;
        AttentionConfig cfg{c, heads, 1};
        AttentionWeights w = init_attention(cfg, rng);
        for (LinearWeights* lw : {&w.query, &w.key, &w.value, &w.proj}) {
            lw->weight = Tensor::randn(lw->weight.shape(), rng, 0.4f);
            lw->bias = Tensor::randn(lw->bias.shape(), rng, 0.1f);
        }
        Tensor x = Tensor::randn({1 + trial % 2, n, c}, rng);
        NoGradGuard no_grad;
        worst = std::max(worst, max_abs_diff(efficient_self_attention({x, {1, 1, n}}, cfg, w).tokens, full_self_attention(x, cfg, w)));
    }
    note(o, worst <= 1e-6, fmt("20 configs, max abs diff %.3g <= 1e-6", worst));
    return o;
}

Outcome gradients() {
    Outcome o;
    std::mt19937_64 rng(202);
    double worst_op = 0;
    std::string worst_name;
    auto op = [&](const std::string& name, const ref64::GradCheck& r) {
        if (r.max_rel >= worst_op) {
            worst_op = r.max_rel;
            worst_name = name;
        }
        if (r.max_rel > 1e-4) note(o, false, fmt("%s rel %.3g", name.c_str(), r.max_rel));
    };
    using ref64::check_gradients;
    using ref64::d;
    {
        Tensor a = Tensor::randn({2, 3, 4}, rng), b = Tensor::randn({2, 4, 5}, rng);
        op("matmul", check_gradients({a, b}, [&] { return matmul(a, b); }, [&] { return ref64::matmul(d(a), d(b)); }));
        Tensor x = Tensor::randn({2, 3, 5}, rng), w = Tensor::randn({4, 5}, rng), bias = Tensor::randn({4}, rng);
        op("linear", check_gradients({x, w, bias}, [&] { return linear(x, w, bias); },
                                     [&] { return ref64::linear(d(x), d(w), d(bias)); }));
    }
    {
        Tensor x = Tensor::randn({2, 4, 5, 4, 5}, rng);
        for (int groups : {1, 2, 4})
            for (int stride : {1, 2}) {
                Tensor w = Tensor::randn({4, 4 / groups, 3, 3, 3}, rng), b = Tensor::randn({4}, rng);
                Conv3dParams p{{stride, stride, stride}, {1, 1, 1}, groups};
                op(fmt("conv3d g%d s%d", groups, stride),
                   check_gradients({x, w, b}, [&] { return conv3d(x, w, b, p); },
                                   [&] { return ref64::conv3d(d(x), d(w), d(b), stride, 1, groups); }));
            }
    }
    {
        Tensor x = Tensor::randn({3, 2, 8}, rng), g = Tensor::randn({8}, rng), b = Tensor::randn({8}, rng);
        op("layernorm", check_gradients({x, g, b}, [&] { return layernorm(x, g, b); },
                                        [&] { return ref64::layernorm(d(x), d(g), d(b), 1e-5); }));
        Tensor s = Tensor::randn({3, 4, 5}, rng);
        for (int axis : {0, 1, 2})
            op(fmt("softmax axis %d", axis),
               check_gradients({s}, [&] { return softmax(s, axis); }, [&] { return ref64::softmax(d(s), axis); }));
        Tensor e = Tensor::randn({40}, rng, 2.0f);
        op("gelu", check_gradients({e}, [&] { return gelu(e); }, [&] { return ref64::gelu(d(e)); }));
        Tensor v = Tensor::randn({1, 2, 2, 3, 2}, rng);
        for (int f : {2, 4})
            op(fmt("upsample x%d", f),
               check_gradients({v}, [&] { return trilinear_upsample(v, f); }, [&] { return ref64::upsample(d(v), f); }));
    }
    {
        Tensor a = Tensor::randn({2, 3, 4}, rng), b = Tensor::randn({2, 3, 4}, rng), c = Tensor::randn({2, 2, 4}, rng);
        auto map2 = [](const T64& x, const T64& y, const std::function<double(double, double)>& f) {
            T64 out = x;
            for (int64_t i = 0; i < x.numel(); ++i) out[i] = f(x[i], y[i]);
            return out;
        };
        op("add", check_gradients({a, b}, [&] { return add(a, b); },
                                  [&] { return map2(d(a), d(b), [](double x, double y) { return x + y; }); }));
        op("sub", check_gradients({a, b}, [&] { return sub(a, b); },
                                  [&] { return map2(d(a), d(b), [](double x, double y) { return x - y; }); }));
        op("mul", check_gradients({a, b}, [&] { return mul(a, b); },
                                  [&] { return map2(d(a), d(b), [](double x, double y) { return x * y; }); }));
        op("scale", check_gradients({a}, [&] { return scale(a, -2.5f); },
                                    [&] { return map2(d(a), d(a), [](double x, double) { return -2.5 * x; }); }));
        auto reduce = [](const T64& x, bool average) {
            T64 out({1});
            for (double v : x.v) out[0] += average ? v / static_cast<double>(x.numel()) : v;
            return out;
        };
        op("sum", check_gradients({a}, [&] { return sum(a); }, [&] { return reduce(d(a), false); }));
        op("mean", check_gradients({a}, [&] { return mean(a); }, [&] { return reduce(d(a), true); }));
        op("reshape", check_gradients({a}, [&] { return reshape(a, {6, 4}); }, [&] { return ref64::reshaped(d(a), {6, 4}); }));
        op("permute", check_gradients({a}, [&] { return permute(a, {2, 0, 1}); }, [&] {
               T64 x = d(a), out({4, 2, 3});
               for (int i = 0; i < 2; ++i)
                   for (int j = 0; j < 3; ++j)
                       for (int k = 0; k < 4; ++k) out[(k * 2 + i) * 3 + j] = x[(i * 3 + j) * 4 + k];
               return out;
           }));
        op("concat", check_gradients({a, c}, [&] { return concat({a, c}, 1); }, [&] {
               T64 x = d(a), y = d(c), out({2, 5, 4});
               for (int i = 0; i < 2; ++i)
                   for (int j = 0; j < 5; ++j)
                       for (int k = 0; k < 4; ++k)
                           out[(i * 5 + j) * 4 + k] = j < 3 ? x[(i * 3 + j) * 4 + k] : y[(i * 2 + j - 3) * 4 + k];
               return out;
           }));
    }
    {
        PatchEmbedConfig pc{2, 3, 3, 2, 1};
        PatchEmbedWeights pw = init_patch_embed(pc, rng);
        pw.bias = Tensor::randn(pw.bias.shape(), rng, 0.1f);
        pw.norm.gamma = Tensor::uniform(pw.norm.gamma.shape(), rng, 0.5f, 1.5f);
        Tensor x = Tensor::randn({1, 2, 4, 4, 6}, rng);
        op("patch embed", check_gradients({x, pw.weight, pw.bias, pw.norm.gamma},
                                          [&] { return overlap_patch_embed(x, pc, pw).tokens; },
                                          [&] { return ref64::patch_embed(d(x), pc, pw).tokens; }));
    }
    {
        AttentionConfig cfg{4, 2, 2};
        BlockWeights w = init_block(cfg, 2, rng);
        for (LinearWeights* lw : {&w.attn.query, &w.attn.key, &w.attn.value, &w.attn.key_reduce, &w.attn.value_reduce,
                                  &w.attn.proj, &w.ffn.fc1, &w.ffn.fc2}) {
            lw->weight = Tensor::randn(lw->weight.shape(), rng, 0.4f);
            lw->bias = Tensor::randn(lw->bias.shape(), rng, 0.1f);
        }
        w.ffn.dw_bias = Tensor::randn(w.ffn.dw_bias.shape(), rng, 0.1f);
        w.norm1.gamma = Tensor::uniform({4}, rng, 0.5f, 1.5f);
        w.norm2.beta = Tensor::randn({4}, rng, 0.1f);
        Tensor x = Tensor::randn({1, 8, 4}, rng);
        op("reduced attention",
           check_gradients({x, w.attn.query.weight, w.attn.key.weight, w.attn.value.bias, w.attn.key_reduce.weight,
                            w.attn.value_reduce.bias, w.attn.proj.weight},
                           [&] { return efficient_self_attention({x, {2, 2, 2}}, cfg, w.attn).tokens; },
                           [&] { return ref64::attention(d(x), cfg, w.attn); }));
        Tensor y = Tensor::randn({1, 12, 4}, rng);
        op("mix ffn", check_gradients({y, w.ffn.fc1.weight, w.ffn.dw_weight, w.ffn.dw_bias, w.ffn.fc2.weight},
                                      [&] { return mix_ffn({y, {1, 3, 4}}, 2, w.ffn).tokens; },
                                      [&] { return ref64::mix_ffn({d(y), {1, 3, 4}}, 2, w.ffn); }));
        op("transformer block",
           check_gradients({x, w.norm1.gamma, w.attn.value.weight, w.norm2.beta, w.ffn.dw_weight},
                           [&] { return transformer_block({x, {2, 2, 2}}, cfg, 2, w).tokens; },
                           [&] { return ref64::block({d(x), {2, 2, 2}}, cfg, 2, w).tokens; }));
    }
    {
        Tensor logits = Tensor::randn({2, 3, 2, 2, 2}, rng);
        IntTensor t({2, 2, 2, 2});
        for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<int32_t>((i * 7) % 3);
        auto scalar = [](double v) {
            T64 out({1});
            out[0] = v;
            return out;
        };
        op("cross entropy", check_gradients({logits}, [&] { return cross_entropy(logits, t); },
                                            [&] { return scalar(ref64::cross_entropy(d(logits), t)); }));
        op("dice loss", check_gradients({logits}, [&] { return dice_loss(logits, t); },
                                        [&] { return scalar(ref64::dice_loss(d(logits), t, 1e-5, false)); }));
        op("dice + ce", check_gradients({logits}, [&] { return dice_ce_loss(logits, t); }, [&] {
               const T64 x = d(logits);
               return scalar(0.5 * ref64::dice_loss(x, t, 1e-5, false) + 0.5 * ref64::cross_entropy(x, t));
           }));
    }
    note(o, worst_op <= 1e-4, fmt("every op max rel %.3g <= 1e-4 (worst: %s)", worst_op, worst_name.c_str()));

    ModelConfig cfg;
    cfg.in_channels = 2;
    cfg.num_classes = 3;
    cfg.widths = {4, 8, 12, 16};
    cfg.depths = {1, 1, 1, 1};
    cfg.heads = {1, 2, 3, 4};
    cfg.stage_reductions = {2, 1, 1, 1};
    cfg.decoder_width = 4;
    cfg.ffn_expansion = 2;
    ModelWeights w = init_model_weights(cfg, 10);
    std::mt19937_64 wrng(11);
    for_each_parameter(w, [&](const std::string& name, Tensor& t) {
        if (name.ends_with("bias") || name.ends_with("beta")) t = Tensor::randn(t.shape(), wrng, 0.1f);
        else if (name.ends_with("gamma")) t = Tensor::uniform(t.shape(), wrng, 0.5f, 1.5f);
        else t = Tensor::randn(t.shape(), wrng, 0.5f);
    });
    Tensor x = Tensor::randn({1, 2, 32, 32, 32}, rng);
    const std::vector<Tensor> subset{w.stages[0].embed.weight, w.stages[0].blocks[0].attn.key_reduce.weight,
                                     w.stages[1].blocks[0].ffn.dw_weight, w.stages[3].norm.gamma,
                                     w.decoder.project_weight[2], w.decoder.fuse_bias, w.decoder.head_weight};
    auto e2e = check_gradients(
        subset, [&] { return mean(forward(x, cfg, w)); },
        [&] {
            T64 y = ref64::forward(d(x), cfg, w), m({1});
            for (double v : y.v) m[0] += v / static_cast<double>(y.numel());
            return m;
        },
        13, 6);
    note(o, e2e.max_rel <= 1e-3, fmt("end-to-end tiny model max rel %.3g <= 1e-3", e2e.max_rel));
    return o;
}

Outcome ladder() {
    Outcome o;
    NoGradGuard no_grad;
    ModelConfig cfg = ModelConfig::reference();
    ModelWeights w = init_model_weights(cfg, 3);
    StageFeatures f = encoder_forward(Tensor::zeros({1, 4, 64, 64, 64}), cfg, w);
    std::string dims;
    bool ok = true;
    for (int i = 0; i < kNumStages; ++i) {
        const Shape s = f.maps[static_cast<size_t>(i)].shape();
        const int64_t want = 16 >> i;
        ok = ok && s == Shape{1, cfg.widths[static_cast<size_t>(i)], want, want, want};
        dims += fmt("%s%lld^3", dims.empty() ? "" : "/", (long long)s[2]);
    }
    note(o, ok, "64^3 encoder features " + dims);
    TokenSequence seq = overlap_patch_embed(Tensor::zeros({1, 4, 128, 128, 128}), cfg.patch_config(0), w.stages[0].embed);
    note(o, seq.length() == 32768, fmt("128^3 patch embed emits %lld tokens", (long long)seq.length()));
    return o;
}

Outcome resolution() {
    Outcome o;
    NoGradGuard no_grad;
    SegFormer3D model(ModelConfig::reference(), 4);
    std::mt19937_64 rng(5);
    for (int64_t side : {32, 64}) {
        bool ok = false;
        try {
            Tensor y = model.forward(Tensor::randn({1, 4, side, side, side}, rng));
            ok = y.shape() == Shape{1, 4, side, side, side} && all_finite(y);
        } catch (const Error& e) {
            note(o, false, e.what());
        }
        note(o, ok, fmt("%lld^3 finite logits", (long long)side));
    }
    return o;
}

std::vector<float> flat_weights(SegFormer3D& m) {
    std::vector<float> out;
    for (Tensor& p : m.parameters()) out.insert(out.end(), p.data().begin(), p.data().end());
    return out;
}

Outcome learning(const fs::path& work) {
    Outcome o;
    constexpr int kReplay = 5;
    TrainConfig tc;
    tc.eval_every = 10;
    tc.checkpoint_every = kReplay;
    tc.out_dir = work / "full";
    fs::remove_all(tc.out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult full = train(ModelConfig::reference(), SynthConfig{}, {}, tc, nullptr, [](const EpochRecord& r) {
        if (r.eval)
            std::fprintf(stderr, "  epoch %d loss %.4f mean dice %.4f\n", r.epoch + 1, r.loss, r.eval->dice.mean_foreground);
    });
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    const DiceScore& dice = full.final_eval.dice;
    note(o, dice.mean_foreground >= 0.90,
         fmt("mean foreground dice %.4f >= 0.90 [%.4f, %.4f, %.4f] after %lld steps", dice.mean_foreground, dice.per_class[1],
             dice.per_class[2], dice.per_class[3], (long long)full.steps));
    note(o, true, fmt("%.1f min on this machine", minutes));

    TrainConfig replay = tc;
    replay.out_dir.clear();
    replay.stop_after = kReplay;
    SegFormer3D again(ModelConfig::reference(), 0);
    TrainResult part = train(ModelConfig::reference(), SynthConfig{}, {}, replay, &again);
    SegFormer3D saved = load_checkpoint(tc.out_dir / "checkpoints" / fmt("epoch_%04d", kReplay));
    bool same_loss = part.log.size() == kReplay;
    for (size_t i = 0; same_loss && i < part.log.size(); ++i) same_loss = part.log[i].loss == full.log[i].loss;
    note(o, same_loss && flat_weights(again) == flat_weights(saved),
         fmt("rerun with the same seed matches losses and weights bitwise over %d epochs", kReplay));
    return o;
}

Outcome loss_metrics() {
    Outcome o;
    const std::vector<int32_t> lab{0, 1, 2, 3, 3, 2, 1, 0};
    const IntTensor t = labels({1, 8, 1, 1}, lab);
    note(o, dice_loss(peaked(lab, 4, 100.0f), t).item() <= 0.01f, "perfect prediction dice loss <= 0.01");

    const std::vector<int32_t> a{1, 1, 1, 1, 0, 0, 0, 0}, b{0, 0, 0, 0, 1, 1, 1, 1}, c{1, 1, 0, 0, 1, 1, 0, 0};
    const float disjoint = dice_loss(peaked(a, 2, 100.0f), labels({1, 8, 1, 1}, b)).item();
    note(o, disjoint >= 0.99f, fmt("disjoint masks dice loss %.6f ~ 1", disjoint));
    const float half = 1.0f - dice_loss(peaked(a, 2, 100.0f), labels({1, 8, 1, 1}, c)).item();
    note(o, std::fabs(half - 0.5f) <= 1e-3f, fmt("|A|=|B|=4, |A^B|=2 soft dice %.6f = 0.5", half));

    const float ce_uniform = cross_entropy(Tensor::zeros({1, 4, 8, 1, 1}), t).item();
    note(o, std::fabs(ce_uniform - std::log(4.0)) <= 1e-6, fmt("uniform CE %.7f = ln 4", ce_uniform));
    const float ce_hard = cross_entropy(peaked(lab, 4, 100.0f), t).item();
    note(o, ce_hard <= 1e-6f, fmt("hard-correct CE %.3g ~ 0", ce_hard));
    std::mt19937_64 rng(303);
    Tensor two = Tensor::randn({1, 2, 2, 2, 2}, rng, 2.0f);
    const IntTensor t2 = labels({1, 2, 2, 2}, {0, 1, 1, 0, 1, 1, 0, 0});
    const double ce_err = std::fabs(cross_entropy(two, t2).item() - ref64::cross_entropy(ref64::d(two), t2));
    note(o, ce_err <= 1e-6, fmt("2-class CE vs float64 oracle %.3g", ce_err));
    Tensor r4 = Tensor::randn({1, 4, 8, 1, 1}, rng);
    const float dl = dice_loss(r4, t).item(), cl = cross_entropy(r4, t).item(), dc = dice_ce_loss(r4, t).item();
    note(o, std::fabs(dc - (dl + cl) / 2) <= 1e-6f, "dice+CE = (d + c) / 2");
    note(o, dice_ce_loss(peaked(lab, 4, 100.0f), t).item() <= 0.01f, "perfect prediction dice+CE ~ 0");

    DiceScore same = dice_score(t, t, 4);
    bool ones = true;
    for (double v : same.per_class) ones = ones && v == 1.0;
    note(o, ones, "pred == target scores 1 per class");
    DiceScore h = dice_score(labels({8}, a), labels({8}, c), 2);
    note(o, h.per_class[1] == 0.5, fmt("|A^B|=2 hard dice %.6f", h.per_class[1]));

    bool symmetric = true;
    double worst_gap = 0;
    std::uniform_int_distribution<int> cls(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int32_t> p(64), q(64);
        for (auto& v : p) v = cls(rng);
        for (auto& v : q) v = cls(rng);
        const IntTensor pt = labels({1, 64, 1, 1}, p), qt = labels({1, 64, 1, 1}, q);
        symmetric = symmetric && dice_score(pt, qt, 4).per_class == dice_score(qt, pt, 4).per_class;
        const double soft = 1.0 - dice_loss(peaked(p, 4, 50.0f), qt).item();
        worst_gap = std::max(worst_gap, std::fabs(soft - dice_score(pt, qt, 4).mean_foreground));
    }
    note(o, symmetric, "dice_score symmetric on 20 random mask pairs");
    note(o, worst_gap <= 1e-3, fmt("soft vs hard dice at margin 50: %.3g <= 1e-3", worst_gap));
    return o;
}

Outcome documented_claims() {
    Outcome o;
    std::ifstream in(fs::path(SF3D_SOURCE_DIR) / "README.md");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string readme = ss.str();
    note(o, !readme.empty(), "README.md readable");
    for (const char* value : {"82.1", "90.96", "82.15"})
        note(o, readme.find(value) != std::string::npos, fmt("README lists %s", value));
    note(o, readme.find("not reproduced") != std::string::npos, "README marks them as not reproduced");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    fs::path work = fs::temp_directory_path() / "sf3d_acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) only.insert(std::atoi(argv[++i]));
        else if (a == "--work" && i + 1 < argc) work = argv[++i];
        else {
            std::fprintf(stderr, "usage: %s [--only N]... [--work DIR]\n", argv[0]);
            return 2;
        }
    }
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"efficiency budget", budget},
        {"attention complexity", complexity},
        {"R = 1 equals full attention", reduction_baseline},
        {"gradient correctness", gradients},
        {"shape ladder", ladder},
        {"resolution agnosticism", resolution},
        {"desk-scale learning", [&] { return learning(work); }},
        {"loss and metric properties", loss_metrics},
        {"non-reproduced results documented", documented_claims},
    };
    int failed = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%d %s %s: %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str(), s);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
