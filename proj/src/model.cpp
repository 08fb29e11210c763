#include "sf3d/model.hpp"

#include <fstream>

#include "sf3d/serialize.hpp"

namespace sf3d {

int ModelConfig::sequence_reduction(int stage) const {
    const int r = stage_reductions.at(static_cast<size_t>(stage));
    return r * r * r;
}

PatchEmbedConfig ModelConfig::patch_config(int stage) const {
    const auto i = static_cast<size_t>(stage);
    return {i == 0 ? in_channels : widths[i - 1], widths[i], patch_kernels[i], patch_strides[i], patch_paddings[i]};
}

AttentionConfig ModelConfig::attention_config(int stage) const {
    const auto i = static_cast<size_t>(stage);
    return {widths[i], heads[i], sequence_reduction(stage)};
}

int ModelConfig::stage_scale(int stage) const {
    int s = 1;
    for (int i = 0; i <= stage; ++i) s *= patch_strides[static_cast<size_t>(i)];
    return s;
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) { check(ok, ErrorCode::InvalidConfig, msg); };
    require(in_channels >= 1, "in_channels must be >= 1");
    require(num_classes >= 2, "num_classes must be >= 2");
    require(decoder_width >= 1, "decoder_width must be >= 1");
    require(ffn_expansion >= 1, "ffn_expansion must be >= 1");
    require(layernorm_eps > 0.0f, "layernorm_eps must be positive");
    for (size_t i = 0; i < kNumStages; ++i) {
        const std::string stage = "stage " + std::to_string(i + 1) + ": ";
        require(widths[i] >= 1, stage + "width must be >= 1");
        require(i == 0 || widths[i] > widths[i - 1], stage + "widths must be strictly increasing");
        require(depths[i] >= 1, stage + "depth must be >= 1");
        require(heads[i] >= 1 && widths[i] % heads[i] == 0, stage + "heads must divide the width");
        require(stage_reductions[i] >= 1, stage + "reduction must be >= 1");
        require(patch_kernels[i] >= 1 && patch_strides[i] >= 1 && patch_paddings[i] >= 0,
                stage + "patch geometry must be positive");
    }
}

void ModelConfig::check_input_extents(int64_t d, int64_t h, int64_t w) const {
    const int64_t s = stage_scale(kNumStages - 1);
    check(d % s == 0 && h % s == 0 && w % s == 0, ErrorCode::IndivisibleExtent,
          "input extents " + shape_to_string({d, h, w}) + " must be divisible by " + std::to_string(s));
}

nlohmann::json to_json(const ModelConfig& cfg) {
    return {{"in_channels", cfg.in_channels},
            {"num_classes", cfg.num_classes},
            {"widths", cfg.widths},
            {"depths", cfg.depths},
            {"heads", cfg.heads},
            {"stage_reductions", cfg.stage_reductions},
            {"patch_kernels", cfg.patch_kernels},
            {"patch_strides", cfg.patch_strides},
            {"patch_paddings", cfg.patch_paddings},
            {"decoder_width", cfg.decoder_width},
            {"ffn_expansion", cfg.ffn_expansion},
            {"attention_bias", cfg.attention_bias},
            {"layernorm_eps", cfg.layernorm_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, bool validate) {
    ModelConfig cfg;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "in_channels") cfg.in_channels = value.get<int>();
            else if (key == "num_classes") cfg.num_classes = value.get<int>();
            else if (key == "widths") cfg.widths = value.get<std::array<int, kNumStages>>();
            else if (key == "depths") cfg.depths = value.get<std::array<int, kNumStages>>();
            else if (key == "heads") cfg.heads = value.get<std::array<int, kNumStages>>();
            else if (key == "stage_reductions") cfg.stage_reductions = value.get<std::array<int, kNumStages>>();
            else if (key == "patch_kernels") cfg.patch_kernels = value.get<std::array<int, kNumStages>>();
            else if (key == "patch_strides") cfg.patch_strides = value.get<std::array<int, kNumStages>>();
            else if (key == "patch_paddings") cfg.patch_paddings = value.get<std::array<int, kNumStages>>();
            else if (key == "decoder_width") cfg.decoder_width = value.get<int>();
            else if (key == "ffn_expansion") cfg.ffn_expansion = value.get<int>();
            else if (key == "attention_bias") cfg.attention_bias = value.get<bool>();
            else if (key == "layernorm_eps") cfg.layernorm_eps = value.get<float>();
            else fail(ErrorCode::InvalidConfig, "unknown model key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("model config: ") + e.what());
    }
    if (validate) cfg.validate();
    return cfg;
}

ModelWeights init_model_weights(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelWeights w;
    for (int i = 0; i < kNumStages; ++i) {
        StageWeights& s = w.stages[static_cast<size_t>(i)];
        s.embed = init_patch_embed(cfg.patch_config(i), rng);
        for (int b = 0; b < cfg.depths[static_cast<size_t>(i)]; ++b)
            s.blocks.push_back(init_block(cfg.attention_config(i), cfg.ffn_expansion, rng, cfg.attention_bias));
        s.norm = init_layernorm(cfg.widths[static_cast<size_t>(i)]);
    }
    // The all-MLP decoder uses the same truncated-normal init as the encoder linears.
    const int c = cfg.decoder_width;
    auto pointwise = [&](int in, int out) {
        LinearWeights lw = init_linear(in, out, rng);
        return std::pair{reshape(lw.weight, {out, in, 1, 1, 1}).detach(), lw.bias};
    };
    for (size_t i = 0; i < kNumStages; ++i)
        std::tie(w.decoder.project_weight[i], w.decoder.project_bias[i]) = pointwise(cfg.widths[i], c);
    std::tie(w.decoder.fuse_weight, w.decoder.fuse_bias) = pointwise(kNumStages * c, c);
    std::tie(w.decoder.head_weight, w.decoder.head_bias) = pointwise(c, cfg.num_classes);
    return w;
}

namespace {

template <typename Weights, typename Fn>
void visit_parameters(Weights& w, Fn&& fn) {
    auto linear = [&](const std::string& name, auto& lw) {
        fn(name + ".weight", lw.weight);
        if (lw.bias.defined()) fn(name + ".bias", lw.bias);
    };
    auto norm = [&](const std::string& name, auto& nw) {
        fn(name + ".gamma", nw.gamma);
        fn(name + ".beta", nw.beta);
    };
    for (size_t i = 0; i < kNumStages; ++i) {
        auto& s = w.stages[i];
        const std::string stage = "encoder.stage" + std::to_string(i + 1);
        fn(stage + ".patch_embed.weight", s.embed.weight);
        fn(stage + ".patch_embed.bias", s.embed.bias);
        norm(stage + ".patch_embed.norm", s.embed.norm);
        for (size_t b = 0; b < s.blocks.size(); ++b) {
            auto& blk = s.blocks[b];
            const std::string block = stage + ".block" + std::to_string(b);
            norm(block + ".norm1", blk.norm1);
            linear(block + ".attn.query", blk.attn.query);
            linear(block + ".attn.key", blk.attn.key);
            linear(block + ".attn.value", blk.attn.value);
            if (blk.attn.key_reduce.weight.defined()) linear(block + ".attn.key_reduce", blk.attn.key_reduce);
            if (blk.attn.value_reduce.weight.defined()) linear(block + ".attn.value_reduce", blk.attn.value_reduce);
            linear(block + ".attn.proj", blk.attn.proj);
            norm(block + ".norm2", blk.norm2);
            linear(block + ".ffn.fc1", blk.ffn.fc1);
            fn(block + ".ffn.dwconv.weight", blk.ffn.dw_weight);
            fn(block + ".ffn.dwconv.bias", blk.ffn.dw_bias);
            linear(block + ".ffn.fc2", blk.ffn.fc2);
        }
        norm(stage + ".norm", s.norm);
    }
    for (size_t i = 0; i < kNumStages; ++i) {
        const std::string name = "decoder.project" + std::to_string(i + 1);
        fn(name + ".weight", w.decoder.project_weight[i]);
        fn(name + ".bias", w.decoder.project_bias[i]);
    }
    fn("decoder.fuse.weight", w.decoder.fuse_weight);
    fn("decoder.fuse.bias", w.decoder.fuse_bias);
    fn("decoder.head.weight", w.decoder.head_weight);
    fn("decoder.head.bias", w.decoder.head_bias);
}

}  // namespace

void for_each_parameter(ModelWeights& w, const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_parameters(w, fn);
}

void for_each_parameter(const ModelWeights& w, const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_parameters(w, fn);
}

int64_t parameter_count(const ModelWeights& w) {
    int64_t total = 0;
    for_each_parameter(w, [&](const std::string&, const Tensor& t) { total += t.numel(); });
    return total;
}

StageFeatures encoder_forward(const Tensor& x, const ModelConfig& cfg, const ModelWeights& w) {
    check(x.rank() == 5, ErrorCode::ShapeMismatch, "model input must be [B, C, D, H, W], got " + shape_to_string(x.shape()));
    check(x.dim(1) == cfg.in_channels, ErrorCode::ShapeMismatch,
          "model expects " + std::to_string(cfg.in_channels) + " input channels, got " + std::to_string(x.dim(1)));
    cfg.check_input_extents(x.dim(2), x.dim(3), x.dim(4));

    StageFeatures feats;
    Tensor current = x;
    for (int i = 0; i < kNumStages; ++i) {
        const auto si = static_cast<size_t>(i);
        const StageWeights& sw = w.stages[si];
        TokenSequence seq = overlap_patch_embed(current, cfg.patch_config(i), sw.embed, cfg.layernorm_eps);
        const AttentionConfig attn = cfg.attention_config(i);
        for (const BlockWeights& bw : sw.blocks)
            seq = transformer_block(seq, attn, cfg.ffn_expansion, bw, cfg.layernorm_eps);
        seq.tokens = layernorm(seq.tokens, sw.norm.gamma, sw.norm.beta, cfg.layernorm_eps);
        feats.maps[si] = tokens_to_volume(seq);
        current = feats.maps[si];
    }
    return feats;
}

Tensor decoder_forward(const StageFeatures& feats, const ModelConfig& cfg, const DecoderWeights& w) {
    const Tensor& finest = feats.maps[0];
    check(finest.defined() && finest.rank() == 5, ErrorCode::ShapeMismatch, "decoder needs four [B, C, D, H, W] maps");
    const Conv3dParams pointwise;
    std::vector<Tensor> aligned;
    for (size_t i = 0; i < kNumStages; ++i) {
        const Tensor& f = feats.maps[i];
        check(f.defined() && f.rank() == 5 && f.dim(0) == finest.dim(0), ErrorCode::ShapeMismatch,
              "stage " + std::to_string(i + 1) + " features disagree with stage 1 in batch/rank");
        Tensor p = conv3d(f, w.project_weight[i], w.project_bias[i], pointwise);
        const int64_t factor = finest.dim(2) / f.dim(2);
        for (int axis = 2; axis < 5; ++axis)
            check(f.dim(axis) * factor == finest.dim(axis), ErrorCode::ShapeMismatch,
                  "stage " + std::to_string(i + 1) + " grid " + shape_to_string(f.shape()) +
                      " is not an integer refinement of stage 1 " + shape_to_string(finest.shape()));
        if (factor > 1) p = trilinear_upsample(p, static_cast<int>(factor));
        aligned.push_back(std::move(p));
    }
    Tensor fused = conv3d(concat(aligned, 1), w.fuse_weight, w.fuse_bias, pointwise);
    Tensor logits = conv3d(fused, w.head_weight, w.head_bias, pointwise);
    const int restore = cfg.stage_scale(0);
    return restore > 1 ? trilinear_upsample(logits, restore) : logits;
}

Tensor forward(const Tensor& x, const ModelConfig& cfg, const ModelWeights& w) {
    return decoder_forward(encoder_forward(x, cfg, w), cfg, w.decoder);
}

SegFormer3D::SegFormer3D(ModelConfig cfg, uint64_t seed) : config_(cfg), weights_(init_model_weights(cfg, seed)) {
    for (Tensor& t : parameters()) t.set_requires_grad(true);
}

SegFormer3D::SegFormer3D(ModelConfig cfg, ModelWeights weights) : config_(cfg), weights_(std::move(weights)) {
    config_.validate();
    for (Tensor& t : parameters()) t.set_requires_grad(true);
}

std::vector<Tensor> SegFormer3D::parameters() {
    std::vector<Tensor> out;
    for_each_parameter(weights_, [&](const std::string&, Tensor& t) { out.push_back(t); });
    return out;
}

void save_checkpoint(const SegFormer3D& model, int64_t step, const std::filesystem::path& dir) {
    std::vector<std::string> names;
    for_each_parameter(model.weights(), [&](const std::string& name, const Tensor& t) {
        save_tensor(t, dir / "weights", name);
        names.push_back(name);
    });
    nlohmann::json manifest{{"config", to_json(model.config())}, {"step", step}, {"weights", names}};
    std::ofstream os(dir / "manifest.json");
    check(os.good(), ErrorCode::IoError, "cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

SegFormer3D load_checkpoint(const std::filesystem::path& dir, int64_t* step) {
    std::ifstream is(dir / "manifest.json");
    check(is.good(), ErrorCode::IoError, "cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    std::vector<std::string> names;
    try {
        is >> manifest;
        names = manifest.at("weights").get<std::vector<std::string>>();
        if (step != nullptr) *step = manifest.at("step").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, "checkpoint manifest: " + std::string(e.what()));
    }
    const ModelConfig cfg = model_config_from_json(manifest.at("config"));
    ModelWeights weights = init_model_weights(cfg, 0);

    size_t index = 0;
    for_each_parameter(weights, [&](const std::string& name, Tensor& t) {
        check(index < names.size() && names[index] == name, ErrorCode::FormatError,
              "checkpoint weight list does not match the architecture at '" + name + "'");
        Tensor loaded = load_tensor(dir / "weights", name);
        check(loaded.shape() == t.shape(), ErrorCode::FormatError,
              name + ": stored " + shape_to_string(loaded.shape()) + ", expected " + shape_to_string(t.shape()));
        t = loaded;
        ++index;
    });
    check(index == names.size(), ErrorCode::FormatError, "checkpoint lists extra weights");
    return SegFormer3D(cfg, std::move(weights));
}

}  // namespace sf3d
