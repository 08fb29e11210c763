#include "sf3d/losses.hpp"

#include <cmath>

#include "sf3d/ops.hpp"

namespace sf3d {

void SoftDiceConfig::validate() const {
    check(smooth > 0.0f, ErrorCode::InvalidConfig, "dice smoothing must be positive");
}

void check_segmentation_target(const Tensor& logits, const IntTensor& target) {
    check(logits.rank() >= 2, ErrorCode::ShapeMismatch, "logits must be [B, K, ...]");
    Shape expected{logits.dim(0)};
    for (int a = 2; a < logits.rank(); ++a) expected.push_back(logits.dim(a));
    check(target.shape == expected, ErrorCode::ShapeMismatch,
          "target " + shape_to_string(target.shape) + " does not match logits " + shape_to_string(logits.shape()));
    const auto k = static_cast<int32_t>(logits.dim(1));
    for (int32_t label : target.data)
        if (label < 0 || label >= k)
            fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
}

namespace {

struct Layout {
    int64_t batch, classes, voxels;
};

Layout layout_of(const Tensor& logits) {
    return {logits.dim(0), logits.dim(1), logits.numel() / (logits.dim(0) * logits.dim(1))};
}

// Softmax over the class axis, stored in the logits' own layout.
std::vector<double> class_probabilities(const Tensor& logits, const Layout& l) {
    std::vector<double> p(static_cast<size_t>(logits.numel()));
    const float* x = logits.ptr();
    for (int64_t b = 0; b < l.batch; ++b)
        for (int64_t v = 0; v < l.voxels; ++v) {
            const int64_t base = b * l.classes * l.voxels + v;
            double mx = x[base];
            for (int64_t c = 1; c < l.classes; ++c) mx = std::max(mx, static_cast<double>(x[base + c * l.voxels]));
            double z = 0.0;
            for (int64_t c = 0; c < l.classes; ++c) {
                const double e = std::exp(x[base + c * l.voxels] - mx);
                p[static_cast<size_t>(base + c * l.voxels)] = e;
                z += e;
            }
            for (int64_t c = 0; c < l.classes; ++c) p[static_cast<size_t>(base + c * l.voxels)] /= z;
        }
    return p;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const IntTensor& target) {
    check_segmentation_target(logits, target);
    const Layout l = layout_of(logits);
    std::vector<double> p = class_probabilities(logits, l);
    const float* x = logits.ptr();
    double total = 0.0;
    for (int64_t b = 0; b < l.batch; ++b)
        for (int64_t v = 0; v < l.voxels; ++v) {
            const int64_t base = b * l.classes * l.voxels + v;
            double mx = x[base];
            for (int64_t c = 1; c < l.classes; ++c) mx = std::max(mx, static_cast<double>(x[base + c * l.voxels]));
            double z = 0.0;
            for (int64_t c = 0; c < l.classes; ++c) z += std::exp(x[base + c * l.voxels] - mx);
            const int32_t t = target.data[static_cast<size_t>(b * l.voxels + v)];
            total += mx + std::log(z) - x[base + t * l.voxels];
        }
    const double count = static_cast<double>(l.batch * l.voxels);
    auto labels = std::make_shared<std::vector<int32_t>>(target.data);
    auto probs = std::make_shared<std::vector<double>>(std::move(p));
    return detail::make_result({1}, {static_cast<float>(total / count)}, OpKind::CrossEntropy, {logits},
                               [l, count, labels, probs](TapeNode& node, const TensorImpl& res) {
                                   float* g = node.inputs[0]->grad_buffer();
                                   const double scale = res.grad[0] / count;
                                   for (int64_t b = 0; b < l.batch; ++b)
                                       for (int64_t v = 0; v < l.voxels; ++v) {
                                           const int64_t base = b * l.classes * l.voxels + v;
                                           const int32_t t = (*labels)[static_cast<size_t>(b * l.voxels + v)];
                                           for (int64_t c = 0; c < l.classes; ++c) {
                                               const auto i = static_cast<size_t>(base + c * l.voxels);
                                               const double onehot = c == t ? 1.0 : 0.0;
                                               g[i] += static_cast<float>(scale * ((*probs)[i] - onehot));
                                           }
                                       }
                               });
}

Tensor dice_loss(const Tensor& logits, const IntTensor& target, const SoftDiceConfig& cfg) {
    cfg.validate();
    check_segmentation_target(logits, target);
    const Layout l = layout_of(logits);
    check(cfg.include_background || l.classes > 1, ErrorCode::InvalidArgument, "no foreground class to score");
    auto probs = std::make_shared<std::vector<double>>(class_probabilities(logits, l));
    const auto k = static_cast<size_t>(l.classes);
    std::vector<double> inter(k, 0.0), psum(k, 0.0), tsum(k, 0.0);
    for (int64_t b = 0; b < l.batch; ++b)
        for (int64_t c = 0; c < l.classes; ++c)
            for (int64_t v = 0; v < l.voxels; ++v) {
                const double p = (*probs)[static_cast<size_t>((b * l.classes + c) * l.voxels + v)];
                const bool hit = target.data[static_cast<size_t>(b * l.voxels + v)] == c;
                psum[static_cast<size_t>(c)] += p;
                if (hit) {
                    inter[static_cast<size_t>(c)] += p;
                    tsum[static_cast<size_t>(c)] += 1.0;
                }
            }
    const double eps = cfg.smooth;
    const size_t first = cfg.include_background ? 0 : 1;
    const double included = static_cast<double>(k - first);
    double dice_sum = 0.0;
    for (size_t c = first; c < k; ++c) dice_sum += (2.0 * inter[c] + eps) / (psum[c] + tsum[c] + eps);

    // dL/dp[c, v] = -(1/|S|) * (2 t / den_c - num_c / den_c^2) for included c.
    std::vector<double> coef_hit(k, 0.0), coef_all(k, 0.0);
    for (size_t c = first; c < k; ++c) {
        const double den = psum[c] + tsum[c] + eps;
        const double num = 2.0 * inter[c] + eps;
        coef_hit[c] = -2.0 / (den * included);
        coef_all[c] = num / (den * den * included);
    }
    auto labels = std::make_shared<std::vector<int32_t>>(target.data);
    return detail::make_result(
        {1}, {static_cast<float>(1.0 - dice_sum / included)}, OpKind::DiceLoss, {logits},
        [l, probs, labels, coef_hit, coef_all](TapeNode& node, const TensorImpl& res) {
            float* g = node.inputs[0]->grad_buffer();
            const double upstream = res.grad[0];
            std::vector<double> dp(static_cast<size_t>(l.classes));
            for (int64_t b = 0; b < l.batch; ++b)
                for (int64_t v = 0; v < l.voxels; ++v) {
                    const int64_t base = b * l.classes * l.voxels + v;
                    const int32_t t = (*labels)[static_cast<size_t>(b * l.voxels + v)];
                    double weighted = 0.0;
                    for (int64_t c = 0; c < l.classes; ++c) {
                        const auto ci = static_cast<size_t>(c);
                        dp[ci] = coef_all[ci] + (c == t ? coef_hit[ci] : 0.0);
                        weighted += dp[ci] * (*probs)[static_cast<size_t>(base + c * l.voxels)];
                    }
                    for (int64_t c = 0; c < l.classes; ++c) {
                        const auto i = static_cast<size_t>(base + c * l.voxels);
                        g[i] += static_cast<float>(upstream * (*probs)[i] * (dp[static_cast<size_t>(c)] - weighted));
                    }
                }
        });
}

Tensor dice_ce_loss(const Tensor& logits, const IntTensor& target, const SoftDiceConfig& cfg) {
    return scale(add(dice_loss(logits, target, cfg), cross_entropy(logits, target)), 0.5f);
}

DiceScore dice_score(const IntTensor& pred, const IntTensor& target, int num_classes) {
    check(num_classes >= 2, ErrorCode::InvalidArgument, "dice_score needs at least two classes");
    check(pred.shape == target.shape, ErrorCode::ShapeMismatch,
          "prediction " + shape_to_string(pred.shape) + " vs target " + shape_to_string(target.shape));
    const auto k = static_cast<size_t>(num_classes);
    std::vector<int64_t> inter(k, 0), in_pred(k, 0), in_target(k, 0);
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const int32_t a = pred.data[i], b = target.data[i];
        if (a < 0 || a >= num_classes || b < 0 || b >= num_classes)
            fail(ErrorCode::LabelOutOfRange, "label outside [0, " + std::to_string(num_classes) + ")");
        ++in_pred[static_cast<size_t>(a)];
        ++in_target[static_cast<size_t>(b)];
        if (a == b) ++inter[static_cast<size_t>(a)];
    }
    DiceScore score;
    for (size_t c = 0; c < k; ++c) {
        const int64_t den = in_pred[c] + in_target[c];
        score.per_class.push_back(den == 0 ? 1.0 : 2.0 * static_cast<double>(inter[c]) / static_cast<double>(den));
    }
    double fg = 0.0;
    for (size_t c = 1; c < k; ++c) fg += score.per_class[c];
    score.mean_foreground = fg / static_cast<double>(k - 1);
    return score;
}

IntTensor argmax_labels(const Tensor& logits) {
    check(logits.rank() >= 2, ErrorCode::ShapeMismatch, "logits must be [B, K, ...]");
    const Layout l = layout_of(logits);
    Shape shape{l.batch};
    for (int a = 2; a < logits.rank(); ++a) shape.push_back(logits.dim(a));
    IntTensor out(shape);
    const float* x = logits.ptr();
    for (int64_t b = 0; b < l.batch; ++b)
        for (int64_t v = 0; v < l.voxels; ++v) {
            const int64_t base = b * l.classes * l.voxels + v;
            int32_t best = 0;
            for (int64_t c = 1; c < l.classes; ++c)
                if (x[base + c * l.voxels] > x[base + best * l.voxels]) best = static_cast<int32_t>(c);
            out.data[static_cast<size_t>(b * l.voxels + v)] = best;
        }
    return out;
}

}  // namespace sf3d
