#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sf3d/blocks.hpp"

namespace sf3d {

inline constexpr int kNumStages = 4;

/// Architecture hyperparameters. `stage_reductions` are per-axis spatial
/// ratios r_i; the attention in stage i shortens its key/value sequence by
/// R_i = r_i^3 tokens-per-token (see sequence_reduction()).
struct ModelConfig {
    int in_channels = 4;
    int num_classes = 4;
    std::array<int, kNumStages> widths{32, 64, 160, 256};
    std::array<int, kNumStages> depths{2, 2, 2, 2};
    std::array<int, kNumStages> heads{1, 2, 5, 8};
    std::array<int, kNumStages> stage_reductions{4, 2, 1, 1};
    std::array<int, kNumStages> patch_kernels{7, 3, 3, 3};
    std::array<int, kNumStages> patch_strides{4, 2, 2, 2};
    std::array<int, kNumStages> patch_paddings{3, 1, 1, 1};
    int decoder_width = 128;
    int ffn_expansion = 4;
    bool attention_bias = true;
    float layernorm_eps = 1e-5f;

    static ModelConfig reference() { return {}; }

    int sequence_reduction(int stage) const;
    PatchEmbedConfig patch_config(int stage) const;
    AttentionConfig attention_config(int stage) const;
    /// Total downsampling of stage i relative to the input (4, 8, 16, 32 for the reference).
    int stage_scale(int stage) const;

    void validate() const;
    /// Throws IndivisibleExtent unless every extent divides by the deepest stage scale.
    void check_input_extents(int64_t d, int64_t h, int64_t w) const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Unknown keys and type errors throw InvalidConfig; `validate` also checks the architecture.
ModelConfig model_config_from_json(const nlohmann::json& j, bool validate = true);

/// Multiscale encoder outputs F_1..F_4, each [B, C_i, D_i, H_i, W_i].
struct StageFeatures {
    std::array<Tensor, kNumStages> maps;
};

struct StageWeights {
    PatchEmbedWeights embed;
    std::vector<BlockWeights> blocks;
    LayerNormWeights norm;
};

/// All-MLP decoder weights; every projection is a 1x1x1 conv [Cout, Cin, 1, 1, 1].
struct DecoderWeights {
    std::array<Tensor, kNumStages> project_weight;
    std::array<Tensor, kNumStages> project_bias;
    Tensor fuse_weight, fuse_bias;
    Tensor head_weight, head_bias;
};

struct ModelWeights {
    std::array<StageWeights, kNumStages> stages;
    DecoderWeights decoder;
};

ModelWeights init_model_weights(const ModelConfig& cfg, uint64_t seed);

/// Visits every trainable tensor with a stable dotted name, in a fixed order.
void for_each_parameter(ModelWeights& w, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_parameter(const ModelWeights& w, const std::function<void(const std::string&, const Tensor&)>& fn);
int64_t parameter_count(const ModelWeights& w);

StageFeatures encoder_forward(const Tensor& x, const ModelConfig& cfg, const ModelWeights& w);
Tensor decoder_forward(const StageFeatures& feats, const ModelConfig& cfg, const DecoderWeights& w);
/// Raw logits [B, num_classes, D, H, W].
Tensor forward(const Tensor& x, const ModelConfig& cfg, const ModelWeights& w);

/// Config + weights bundle, the unit that trains, checkpoints and predicts.
class SegFormer3D {
public:
    SegFormer3D(ModelConfig cfg, uint64_t seed);
    SegFormer3D(ModelConfig cfg, ModelWeights weights);

    const ModelConfig& config() const { return config_; }
    ModelWeights& weights() { return weights_; }
    const ModelWeights& weights() const { return weights_; }

    Tensor forward(const Tensor& x) const { return sf3d::forward(x, config_, weights_); }
    std::vector<Tensor> parameters();
    int64_t num_parameters() const { return parameter_count(weights_); }

private:
    ModelConfig config_;
    ModelWeights weights_;
};

/// Checkpoint = directory of tensor blobs (one per named weight) plus
/// manifest.json {"config", "step", "weights": [names...]}.
void save_checkpoint(const SegFormer3D& model, int64_t step, const std::filesystem::path& dir);
SegFormer3D load_checkpoint(const std::filesystem::path& dir, int64_t* step = nullptr);

}  // namespace sf3d
