#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "sf3d/model.hpp"

namespace sf3d {

struct ModuleCost {
    std::string name;
    int64_t params = 0;
    uint64_t flops = 0;
    uint64_t macs = 0;  // multiply-adds inside matmul, linear and conv only
};

struct ProfileReport {
    ModelConfig config;
    Shape input_shape;  // empty when only parameters were counted
    int64_t total_params = 0;
    uint64_t total_flops = 0;
    uint64_t total_macs = 0;
    std::vector<ModuleCost> modules;

    static const char* convention();
};

/// Closed-form counts over the instantiated module tree.
ProfileReport count_params(const ModelConfig& cfg);
/// Closed-form forward cost at input [B, C, D, H, W]; also fills parameters.
ProfileReport count_flops(const ModelConfig& cfg, const Shape& input_shape);

int64_t linear_params(int64_t in, int64_t out, bool bias = true);
int64_t conv3d_params(int64_t cin, int64_t cout, int kernel, int groups = 1, bool bias = true);

/// Cost of the two score products of one attention layer at sequence length
/// n, reduction r and width c (summed over heads and batch).
struct AttentionScoreFlops {
    uint64_t qk = 0;  // Q K^T: 2 * h * N * (N/R) * d_head
    uint64_t av = 0;  // scores * V: same count
    uint64_t total() const { return qk + av; }
};
AttentionScoreFlops attention_score_flops(int64_t n, int64_t channels, int64_t reduction, int64_t batch = 1);

/// One timed attention configuration. Times are the minimum over repeats.
struct AttentionBench {
    int64_t n = 0, channels = 0, heads = 0, reduction = 0;
    AttentionScoreFlops score_flops;
    uint64_t layer_flops = 0;  // whole efficient attention layer, instrumented
    double score_ms = 0.0;     // softmax(Q K^T / sqrt(d)) V on precomputed Q, K, V
    double layer_ms = 0.0;     // projections, reduction, scores and output projection
};

/// Random tokens [1, n, channels] through one attention layer at reduction r.
AttentionBench bench_attention(int64_t n, int64_t channels, int heads, int64_t reduction, int repeats = 3, uint64_t seed = 0);

nlohmann::json to_json(const ProfileReport& report);
/// Aligned human-readable table, one line per module plus totals.
std::string format_table(const ProfileReport& report);

}  // namespace sf3d
