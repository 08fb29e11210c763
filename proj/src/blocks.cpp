#include "sf3d/blocks.hpp"

#include <cmath>

#include "eigen_maps.hpp"

namespace sf3d {

TokenSequence volume_to_tokens(const Tensor& volume) {
    check(volume.rank() == 5, ErrorCode::ShapeMismatch, "expected [B, C, D, H, W], got " + shape_to_string(volume.shape()));
    const Grid grid{volume.dim(2), volume.dim(3), volume.dim(4)};
    Tensor flat = reshape(volume, {volume.dim(0), volume.dim(1), grid.volume()});
    return {permute(flat, {0, 2, 1}), grid};
}

Tensor tokens_to_volume(const TokenSequence& seq) {
    check(seq.tokens.rank() == 3, ErrorCode::ShapeMismatch, "tokens must be [B, N, C]");
    check(seq.length() == seq.grid.volume(), ErrorCode::ShapeMismatch,
          "token count " + std::to_string(seq.length()) + " does not match grid volume " +
              std::to_string(seq.grid.volume()));
    Tensor channels_first = permute(seq.tokens, {0, 2, 1});
    return reshape(channels_first, {seq.batch(), seq.channels(), seq.grid.d, seq.grid.h, seq.grid.w});
}

void PatchEmbedConfig::validate() const {
    check(in_channels > 0 && out_channels > 0, ErrorCode::InvalidConfig, "patch embed channels must be positive");
    check(kernel > 0 && stride > 0 && padding >= 0, ErrorCode::InvalidConfig, "patch embed geometry must be positive");
}

void AttentionConfig::validate() const {
    check(channels > 0 && num_heads > 0, ErrorCode::InvalidConfig, "attention channels/heads must be positive");
    check(channels % num_heads == 0, ErrorCode::InvalidConfig,
          "channels " + std::to_string(channels) + " not divisible by heads " + std::to_string(num_heads));
    check(reduction_ratio >= 1, ErrorCode::InvalidConfig, "reduction ratio must be >= 1");
}

namespace {

Tensor truncated_normal(Shape shape, std::mt19937_64& rng, float stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (float& v : t.data()) {
        float s;
        do s = dist(rng);
        while (std::fabs(s) > 2.0f);
        v = s * stddev;
    }
    return t;
}

Tensor conv_weight(int cout, int cin_per_group, int kernel, int groups, std::mt19937_64& rng) {
    const double fan_out = static_cast<double>(kernel) * kernel * kernel * cout / groups;
    return Tensor::randn({cout, cin_per_group, kernel, kernel, kernel}, rng, static_cast<float>(std::sqrt(2.0 / fan_out)));
}

}  // namespace

LinearWeights init_linear(int in, int out, std::mt19937_64& rng, bool bias) {
    LinearWeights w;
    w.weight = truncated_normal({out, in}, rng, 0.02f);
    if (bias) w.bias = Tensor::zeros({out});
    return w;
}

LayerNormWeights init_layernorm(int channels) { return {Tensor::ones({channels}), Tensor::zeros({channels})}; }

PatchEmbedWeights init_patch_embed(const PatchEmbedConfig& cfg, std::mt19937_64& rng) {
    return {conv_weight(cfg.out_channels, cfg.in_channels, cfg.kernel, 1, rng), Tensor::zeros({cfg.out_channels}),
            init_layernorm(cfg.out_channels)};
}

AttentionWeights init_attention(const AttentionConfig& cfg, std::mt19937_64& rng, bool bias) {
    const int c = cfg.channels;
    AttentionWeights w;
    w.query = init_linear(c, c, rng, bias);
    w.key = init_linear(c, c, rng, bias);
    w.value = init_linear(c, c, rng, bias);
    if (cfg.reduction_ratio > 1) {
        w.key_reduce = init_linear(c * cfg.reduction_ratio, c, rng, bias);
        w.value_reduce = init_linear(c * cfg.reduction_ratio, c, rng, bias);
    }
    w.proj = init_linear(c, c, rng, bias);
    return w;
}

MixFfnWeights init_mix_ffn(int channels, int expansion, std::mt19937_64& rng) {
    const int hidden = channels * expansion;
    MixFfnWeights w;
    w.fc1 = init_linear(channels, hidden, rng);
    w.dw_weight = conv_weight(hidden, 1, 3, hidden, rng);
    w.dw_bias = Tensor::zeros({hidden});
    w.fc2 = init_linear(hidden, channels, rng);
    return w;
}

BlockWeights init_block(const AttentionConfig& cfg, int expansion, std::mt19937_64& rng, bool bias) {
    BlockWeights w;
    w.norm1 = init_layernorm(cfg.channels);
    w.attn = init_attention(cfg, rng, bias);
    w.norm2 = init_layernorm(cfg.channels);
    w.ffn = init_mix_ffn(cfg.channels, expansion, rng);
    return w;
}

TokenSequence overlap_patch_embed(const Tensor& x, const PatchEmbedConfig& cfg, const PatchEmbedWeights& w, float eps) {
    cfg.validate();
    check(x.rank() == 5 && x.dim(1) == cfg.in_channels, ErrorCode::ShapeMismatch,
          "patch embed expects [B, " + std::to_string(cfg.in_channels) + ", D, H, W], got " + shape_to_string(x.shape()));
    Conv3dParams params;
    params.stride = {cfg.stride, cfg.stride, cfg.stride};
    params.padding = {cfg.padding, cfg.padding, cfg.padding};
    TokenSequence seq = volume_to_tokens(conv3d(x, w.weight, w.bias, params));
    seq.tokens = layernorm(seq.tokens, w.norm.gamma, w.norm.beta, eps);
    return seq;
}

Tensor reduce_sequence(const Tensor& tokens, int reduction_ratio, const LinearWeights& projection) {
    const int64_t b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
    check(n % reduction_ratio == 0, ErrorCode::ReductionIndivisible,
          "sequence length " + std::to_string(n) + " not divisible by reduction ratio " + std::to_string(reduction_ratio));
    Tensor folded = reshape(tokens, {b, n / reduction_ratio, c * reduction_ratio});
    return linear(folded, projection.weight, projection.bias);
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int num_heads, Tensor* probabilities) {
    const int64_t b = q.dim(0), n = q.dim(1), c = q.dim(2), m = k.dim(1);
    check(k.shape() == v.shape() && k.dim(0) == b && k.dim(2) == c, ErrorCode::ShapeMismatch,
          "attention operands disagree: q " + shape_to_string(q.shape()) + ", k " + shape_to_string(k.shape()) + ", v " +
              shape_to_string(v.shape()));
    check(c % num_heads == 0, ErrorCode::ShapeMismatch, "channels not divisible by heads");
    const int64_t d = c / num_heads;

    Tensor qh = permute(reshape(q, {b, n, num_heads, d}), {0, 2, 1, 3});   // [B, h, N, d]
    Tensor kt = permute(reshape(k, {b, m, num_heads, d}), {0, 2, 3, 1});   // [B, h, d, M]
    Tensor vh = permute(reshape(v, {b, m, num_heads, d}), {0, 2, 1, 3});   // [B, h, M, d]
    Tensor scores = scale(matmul(qh, kt), static_cast<float>(1.0 / std::sqrt(static_cast<double>(d))));
    Tensor probs = softmax(scores, -1);
    if (probabilities != nullptr) *probabilities = probs;
    Tensor out = matmul(probs, vh);  // [B, h, N, d]
    return reshape(permute(out, {0, 2, 1, 3}), {b, n, c});
}

TokenSequence efficient_self_attention(const TokenSequence& seq, const AttentionConfig& cfg, const AttentionWeights& w,
                                       Tensor* probabilities) {
    cfg.validate();
    check(seq.channels() == cfg.channels, ErrorCode::ShapeMismatch,
          "attention width " + std::to_string(cfg.channels) + " vs tokens " + shape_to_string(seq.tokens.shape()));
    check(seq.length() % cfg.reduction_ratio == 0, ErrorCode::ReductionIndivisible,
          "sequence length " + std::to_string(seq.length()) + " not divisible by reduction ratio " +
              std::to_string(cfg.reduction_ratio));

    const Tensor& x = seq.tokens;
    Tensor q = linear(x, w.query.weight, w.query.bias);
    Tensor k = linear(x, w.key.weight, w.key.bias);
    Tensor v = linear(x, w.value.weight, w.value.bias);
    if (cfg.reduction_ratio > 1) {
        check(w.key_reduce.weight.defined() && w.value_reduce.weight.defined(), ErrorCode::InvalidArgument,
              "reduction ratio > 1 needs key/value reduction projections");
        k = reduce_sequence(k, cfg.reduction_ratio, w.key_reduce);
        v = reduce_sequence(v, cfg.reduction_ratio, w.value_reduce);
    }
    Tensor attended = attention_core(q, k, v, cfg.num_heads, probabilities);
    return {linear(attended, w.proj.weight, w.proj.bias), seq.grid};
}

Tensor full_self_attention(const Tensor& tokens, const AttentionConfig& cfg, const AttentionWeights& w) {
    using detail::as_matrix;
    using detail::RowMatrix;
    cfg.validate();
    const int64_t b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
    check(c == cfg.channels, ErrorCode::ShapeMismatch, "attention width mismatch");
    const int64_t heads = cfg.num_heads, d = cfg.head_dim();
    const float inv_sqrt_d = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)));

    auto project = [&](const float* x, const LinearWeights& lw) {
        RowMatrix y = as_matrix(x, n, c) * as_matrix(lw.weight.ptr(), c, c).transpose();
        if (lw.bias.defined()) y.rowwise() += detail::as_row(lw.bias.ptr(), c);
        return y;
    };

    FloatBuffer out(static_cast<size_t>(b * n * c));
    for (int64_t bi = 0; bi < b; ++bi) {
        const float* x = tokens.ptr() + bi * n * c;
        const RowMatrix q = project(x, w.query), k = project(x, w.key), v = project(x, w.value);
        RowMatrix merged(n, c);
        for (int64_t h = 0; h < heads; ++h) {
            RowMatrix s = q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose() * inv_sqrt_d;
            for (int64_t r = 0; r < n; ++r) {
                const float mx = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - mx).exp().matrix();
                s.row(r) /= s.row(r).sum();
            }
            merged.middleCols(h * d, d) = s * v.middleCols(h * d, d);
        }
        RowMatrix y = merged * as_matrix(w.proj.weight.ptr(), c, c).transpose();
        if (w.proj.bias.defined()) y.rowwise() += detail::as_row(w.proj.bias.ptr(), c);
        as_matrix(out.data() + bi * n * c, n, c) = y;
    }
    return Tensor(tokens.shape(), std::move(out));
}

TokenSequence mix_ffn(const TokenSequence& seq, int expansion, const MixFfnWeights& w) {
    const int64_t hidden = seq.channels() * expansion;
    check(w.fc1.weight.dim(0) == hidden, ErrorCode::ShapeMismatch,
          "mix-ffn fc1 " + shape_to_string(w.fc1.weight.shape()) + " does not match expansion " + std::to_string(expansion));
    check(seq.length() == seq.grid.volume(), ErrorCode::ShapeMismatch, "token count does not match grid");

    Tensor h = linear(seq.tokens, w.fc1.weight, w.fc1.bias);
    Conv3dParams dw;
    dw.padding = {1, 1, 1};
    dw.groups = static_cast<int>(hidden);
    Tensor spatial = conv3d(tokens_to_volume({h, seq.grid}), w.dw_weight, w.dw_bias, dw);
    Tensor act = gelu(volume_to_tokens(spatial).tokens);
    return {linear(act, w.fc2.weight, w.fc2.bias), seq.grid};
}

TokenSequence transformer_block(const TokenSequence& seq, const AttentionConfig& cfg, int expansion,
                                const BlockWeights& w, float eps) {
    TokenSequence normed{layernorm(seq.tokens, w.norm1.gamma, w.norm1.beta, eps), seq.grid};
    Tensor y = add(seq.tokens, efficient_self_attention(normed, cfg, w.attn).tokens);
    TokenSequence normed2{layernorm(y, w.norm2.gamma, w.norm2.beta, eps), seq.grid};
    return {add(y, mix_ffn(normed2, expansion, w.ffn).tokens), seq.grid};
}

}  // namespace sf3d
