#pragma once

#include <random>

#include "sf3d/ops.hpp"

namespace sf3d {

struct Grid {
    int64_t d = 0, h = 0, w = 0;

    int64_t volume() const { return d * h * w; }
    bool operator==(const Grid&) const = default;
};

/// Tokens [B, N, C] of a flattened (row-major) D x H x W voxel grid.
struct TokenSequence {
    Tensor tokens;
    Grid grid;

    int64_t batch() const { return tokens.dim(0); }
    int64_t length() const { return tokens.dim(1); }
    int64_t channels() const { return tokens.dim(2); }
};

/// [B, C, D, H, W] -> tokens [B, D*H*W, C].
TokenSequence volume_to_tokens(const Tensor& volume);
/// tokens [B, N, C] -> [B, C, D, H, W] on the sequence's grid.
Tensor tokens_to_volume(const TokenSequence& seq);

struct PatchEmbedConfig {
    int in_channels = 4;
    int out_channels = 32;
    int kernel = 7;
    int stride = 4;
    int padding = 3;

    /// kernel > stride keeps neighbouring patches overlapping.
    bool overlapping() const { return kernel > stride; }
    void validate() const;
};

struct AttentionConfig {
    int channels = 32;
    int num_heads = 1;
    int reduction_ratio = 1;  // keys/values are shortened from N to N / reduction_ratio tokens

    int head_dim() const { return channels / num_heads; }
    void validate() const;
};

struct LinearWeights {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
};

struct LayerNormWeights {
    Tensor gamma;
    Tensor beta;
};

struct PatchEmbedWeights {
    Tensor weight;  // [Cout, Cin, k, k, k]
    Tensor bias;
    LayerNormWeights norm;
};

/// key_reduce / value_reduce are Linear(C*R -> C) and stay undefined when R == 1.
struct AttentionWeights {
    LinearWeights query, key, value;
    LinearWeights key_reduce, value_reduce;
    LinearWeights proj;
};

struct MixFfnWeights {
    LinearWeights fc1;   // C -> eC
    Tensor dw_weight;    // [eC, 1, 3, 3, 3]
    Tensor dw_bias;
    LinearWeights fc2;   // eC -> C
};

struct BlockWeights {
    LayerNormWeights norm1;
    AttentionWeights attn;
    LayerNormWeights norm2;
    MixFfnWeights ffn;
};

// Initialisers: truncated-normal(0.02) linears, He-style (fan-out) convs,
// unit/zero layer norms, zero biases.
LinearWeights init_linear(int in, int out, std::mt19937_64& rng, bool bias = true);
LayerNormWeights init_layernorm(int channels);
PatchEmbedWeights init_patch_embed(const PatchEmbedConfig& cfg, std::mt19937_64& rng);
AttentionWeights init_attention(const AttentionConfig& cfg, std::mt19937_64& rng, bool bias = true);
MixFfnWeights init_mix_ffn(int channels, int expansion, std::mt19937_64& rng);
BlockWeights init_block(const AttentionConfig& cfg, int expansion, std::mt19937_64& rng, bool bias = true);

/// Overlapped patch merging: strided conv3d, flatten to tokens, layer norm.
TokenSequence overlap_patch_embed(const Tensor& x, const PatchEmbedConfig& cfg, const PatchEmbedWeights& w,
                                  float eps = 1e-5f);

/// Folds each run of R consecutive tokens into one token of width C*R and
/// projects it back to C: [B, N, C] -> [B, N/R, C].
Tensor reduce_sequence(const Tensor& tokens, int reduction_ratio, const LinearWeights& projection);

/// Multi-head softmax(Q K^T / sqrt(d_head)) V for q [B, N, C], k/v [B, M, C].
/// When `probabilities` is non-null it receives the [B, h, N, M] score matrix.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int num_heads,
                      Tensor* probabilities = nullptr);

/// Sequence-reduced multi-head self-attention. Output has the input's shape.
TokenSequence efficient_self_attention(const TokenSequence& seq, const AttentionConfig& cfg,
                                       const AttentionWeights& w, Tensor* probabilities = nullptr);

/// Plain full multi-head self-attention over the same weights, ignoring any
/// reduction projections. Forward only; the baseline the reduced variant is
/// compared against.
Tensor full_self_attention(const Tensor& tokens, const AttentionConfig& cfg, const AttentionWeights& w);

/// Linear(C -> eC), depthwise 3x3x3 conv on the token grid, GELU, Linear(eC -> C).
TokenSequence mix_ffn(const TokenSequence& seq, int expansion, const MixFfnWeights& w);

/// Pre-norm residual block: x + attn(LN(x)), then y + ffn(LN(y)).
TokenSequence transformer_block(const TokenSequence& seq, const AttentionConfig& cfg, int expansion,
                                const BlockWeights& w, float eps = 1e-5f);

}  // namespace sf3d
