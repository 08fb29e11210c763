#include "sf3d/profiler.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

#include "sf3d/blocks.hpp"

#include "sf3d/flop_convention.hpp"

namespace sf3d {

namespace fc = flop_convention;

const char* ProfileReport::convention() {
    return "multiply-add = 2 FLOPs; bias/residual/scale add = 1 per element; layernorm = 5, softmax = 5, "
           "gelu = 1 per element; trilinear upsample = 16 per output element; reshape/permute/concat = 0";
}

int64_t linear_params(int64_t in, int64_t out, bool bias) { return in * out + (bias ? out : 0); }

int64_t conv3d_params(int64_t cin, int64_t cout, int kernel, int groups, bool bias) {
    return cout * (cin / groups) * kernel * kernel * kernel + (bias ? cout : 0);
}

AttentionScoreFlops attention_score_flops(int64_t n, int64_t channels, int64_t reduction, int64_t batch) {
    check(reduction >= 1 && n % reduction == 0, ErrorCode::ReductionIndivisible,
          "sequence length " + std::to_string(n) + " not divisible by " + std::to_string(reduction));
    // h * d_head == channels, so the head count cancels.
    const auto per = static_cast<uint64_t>(2 * batch * n * (n / reduction) * channels);
    return {per, per};
}

namespace {

// Accumulates costs for one named module.
struct Cost {
    int64_t params = 0;
    uint64_t flops = 0;
    uint64_t macs = 0;

    void linear(int64_t rows, int64_t in, int64_t out, bool bias) {
        params += linear_params(in, out, bias);
        macs += static_cast<uint64_t>(rows * in * out);
        flops += static_cast<uint64_t>(2 * rows * in * out + (bias ? rows * out : 0));
    }
    void conv(int64_t batch, int64_t cin, int64_t cout, int kernel, int groups, int64_t out_voxels) {
        params += conv3d_params(cin, cout, kernel, groups);
        const auto m = static_cast<uint64_t>(batch * cout * (cin / groups) * kernel * kernel * kernel * out_voxels);
        macs += m;
        flops += 2 * m + static_cast<uint64_t>(batch * cout * out_voxels);
    }
    void layernorm(int64_t rows, int64_t c) {
        params += 2 * c;
        flops += fc::kLayerNorm * static_cast<uint64_t>(rows * c);
    }
};

class Builder {
public:
    explicit Builder(ProfileReport& r, bool with_flops) : report_(r), with_flops_(with_flops) {}

    void add(const std::string& name, const Cost& c) {
        ModuleCost m{name, c.params, with_flops_ ? c.flops : 0, with_flops_ ? c.macs : 0};
        report_.total_params += m.params;
        report_.total_flops += m.flops;
        report_.total_macs += m.macs;
        report_.modules.push_back(std::move(m));
    }

private:
    ProfileReport& report_;
    bool with_flops_;
};

ProfileReport build(const ModelConfig& cfg, const Shape& input_shape, bool with_flops) {
    cfg.validate();
    // Parameters do not depend on the input, so a nominal extent serves when only counting them.
    int64_t batch = 1, d = 32, h = 32, w = 32;
    if (with_flops) {
        check(input_shape.size() == 5, ErrorCode::ShapeMismatch,
              "profile input must be [B, C, D, H, W], got " + shape_to_string(input_shape));
        check(input_shape[1] == cfg.in_channels, ErrorCode::ShapeMismatch, "profile input channel count differs from config");
        batch = input_shape[0];
        d = input_shape[2];
        h = input_shape[3];
        w = input_shape[4];
    } else {
        d = h = w = cfg.stage_scale(kNumStages - 1);
    }
    cfg.check_input_extents(d, h, w);

    ProfileReport report;
    report.config = cfg;
    if (with_flops) report.input_shape = input_shape;
    Builder out(report, with_flops);

    const int64_t e = cfg.ffn_expansion;
    const bool bias = cfg.attention_bias;
    std::array<int64_t, kNumStages> tokens{};
    int64_t cin = cfg.in_channels;
    for (int i = 0; i < kNumStages; ++i) {
        const auto si = static_cast<size_t>(i);
        const std::string stage = "encoder.stage" + std::to_string(i + 1);
        const PatchEmbedConfig pe = cfg.patch_config(i);
        d = conv_output_extent(d, pe.kernel, pe.stride, pe.padding);
        h = conv_output_extent(h, pe.kernel, pe.stride, pe.padding);
        w = conv_output_extent(w, pe.kernel, pe.stride, pe.padding);
        const int64_t n = d * h * w, c = cfg.widths[si], rows = batch * n;
        tokens[si] = n;

        Cost embed;
        embed.conv(batch, cin, c, pe.kernel, 1, n);
        embed.layernorm(rows, c);
        out.add(stage + ".patch_embed", embed);

        const AttentionConfig ac = cfg.attention_config(i);
        const int64_t r = ac.reduction_ratio;
        check(n % r == 0, ErrorCode::ReductionIndivisible,
              stage + ": " + std::to_string(n) + " tokens not divisible by reduction " + std::to_string(r));
        const int64_t m = n / r;
        for (int b = 0; b < cfg.depths[si]; ++b) {
            const std::string block = stage + ".block" + std::to_string(b);
            Cost norm1, norm2;
            norm1.layernorm(rows, c);
            norm2.layernorm(rows, c);

            Cost attn;
            for (int p = 0; p < 3; ++p) attn.linear(rows, c, c, bias);  // q, k, v
            if (r > 1)
                for (int p = 0; p < 2; ++p) attn.linear(batch * m, c * r, c, bias);
            const AttentionScoreFlops s = attention_score_flops(n, c, r, batch);
            attn.flops += s.total();
            attn.macs += s.total() / 2;
            const auto scores = static_cast<uint64_t>(batch * ac.num_heads * n * m);
            attn.flops += fc::kElementwise * scores + fc::kSoftmax * scores;  // 1/sqrt(d) scale, softmax
            attn.linear(rows, c, c, bias);                                     // output projection

            Cost ffn;
            ffn.linear(rows, c, e * c, true);
            ffn.conv(batch, e * c, e * c, 3, static_cast<int>(e * c), n);
            ffn.flops += fc::kGelu * static_cast<uint64_t>(rows * e * c);
            ffn.linear(rows, e * c, c, true);

            Cost residual;
            residual.flops = 2 * fc::kElementwise * static_cast<uint64_t>(rows * c);

            out.add(block + ".norm1", norm1);
            out.add(block + ".attn", attn);
            out.add(block + ".norm2", norm2);
            out.add(block + ".ffn", ffn);
            out.add(block + ".residual", residual);
        }
        Cost norm;
        norm.layernorm(rows, c);
        out.add(stage + ".norm", norm);
        cin = c;
    }

    const int64_t cd = cfg.decoder_width, k = cfg.num_classes, n1 = tokens[0];
    for (size_t i = 0; i < kNumStages; ++i) {
        Cost proj;
        proj.conv(batch, cfg.widths[i], cd, 1, 1, tokens[i]);
        out.add("decoder.project" + std::to_string(i + 1), proj);
        if (tokens[i] != n1) {
            Cost up;
            up.flops = fc::kTrilinear * static_cast<uint64_t>(batch * cd * n1);
            out.add("decoder.upsample" + std::to_string(i + 1), up);
        }
    }
    Cost fuse, head, restore;
    fuse.conv(batch, kNumStages * cd, cd, 1, 1, n1);
    head.conv(batch, cd, k, 1, 1, n1);
    const int64_t s0 = cfg.stage_scale(0);
    if (s0 > 1) restore.flops = fc::kTrilinear * static_cast<uint64_t>(batch * k * n1 * s0 * s0 * s0);
    out.add("decoder.fuse", fuse);
    out.add("decoder.head", head);
    out.add("decoder.upsample_logits", restore);
    return report;
}

std::string with_commas(uint64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<size_t>(i), ",");
    return s;
}

}  // namespace

AttentionBench bench_attention(int64_t n, int64_t channels, int heads, int64_t reduction, int repeats, uint64_t seed) {
    check(n >= 1 && channels >= 1, ErrorCode::InvalidArgument, "bench: n and channels must be positive");
    check(repeats >= 1, ErrorCode::InvalidArgument, "bench: repeats must be >= 1");
    AttentionConfig cfg{static_cast<int>(channels), heads, static_cast<int>(reduction)};
    cfg.validate();
    AttentionBench out{n, channels, heads, reduction, attention_score_flops(n, channels, reduction), 0, 0.0, 0.0};

    std::mt19937_64 rng(seed);
    const AttentionWeights w = init_attention(cfg, rng);
    // The layer only needs a token count; a 1 x 1 x n grid carries it.
    const TokenSequence seq{Tensor::randn({1, n, channels}, rng), {1, 1, n}};
    const Tensor q = Tensor::randn({1, n, channels}, rng);
    const Tensor k = Tensor::randn({1, n / reduction, channels}, rng);
    const Tensor v = Tensor::randn({1, n / reduction, channels}, rng);

    NoGradGuard no_grad;
    {
        FlopCounter counter;
        efficient_self_attention(seq, cfg, w);
        out.layer_flops = counter.total();
    }
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double, std::milli>(b - a).count(); };
    out.score_ms = out.layer_ms = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = clock::now();
        attention_core(q, k, v, heads);
        const auto t1 = clock::now();
        efficient_self_attention(seq, cfg, w);
        const auto t2 = clock::now();
        out.score_ms = std::min(out.score_ms, ms(t0, t1));
        out.layer_ms = std::min(out.layer_ms, ms(t1, t2));
    }
    return out;
}

ProfileReport count_params(const ModelConfig& cfg) { return build(cfg, {}, false); }

ProfileReport count_flops(const ModelConfig& cfg, const Shape& input_shape) { return build(cfg, input_shape, true); }

nlohmann::json to_json(const ProfileReport& report) {
    nlohmann::json modules = nlohmann::json::array();
    for (const ModuleCost& m : report.modules)
        modules.push_back({{"name", m.name}, {"params", m.params}, {"flops", m.flops}, {"macs", m.macs}});
    return {{"config", to_json(report.config)},
            {"input_shape", report.input_shape},
            {"total_params", report.total_params},
            {"total_flops", report.total_flops},
            {"total_macs", report.total_macs},
            {"gflops", static_cast<double>(report.total_flops) / 1e9},
            {"params_millions", static_cast<double>(report.total_params) / 1e6},
            {"counting_convention", ProfileReport::convention()},
            {"modules", modules}};
}

std::string format_table(const ProfileReport& report) {
    size_t width = 6;
    for (const ModuleCost& m : report.modules) width = std::max(width, m.name.size());
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-*s %12s %18s %7s\n", static_cast<int>(width), "module", "params", "flops", "flops%");
    os << line;
    for (const ModuleCost& m : report.modules) {
        const double share = report.total_flops ? 100.0 * static_cast<double>(m.flops) / static_cast<double>(report.total_flops) : 0.0;
        std::snprintf(line, sizeof line, "%-*s %12s %18s %6.2f%%\n", static_cast<int>(width), m.name.c_str(),
                      with_commas(static_cast<uint64_t>(m.params)).c_str(), with_commas(m.flops).c_str(), share);
        os << line;
    }
    std::snprintf(line, sizeof line, "%-*s %12s %18s\n", static_cast<int>(width), "total",
                  with_commas(static_cast<uint64_t>(report.total_params)).c_str(), with_commas(report.total_flops).c_str());
    os << line << '\n';
    os << "params: " << static_cast<double>(report.total_params) / 1e6 << " M\n";
    if (!report.input_shape.empty()) {
        os << "input:  " << shape_to_string(report.input_shape) << '\n';
        os << "flops:  " << static_cast<double>(report.total_flops) / 1e9 << " G (" << static_cast<double>(report.total_macs) / 1e9
           << " G multiply-adds)\n";
    }
    os << "convention: " << ProfileReport::convention() << '\n';
    return os.str();
}

}  // namespace sf3d
