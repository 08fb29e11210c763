#pragma once

#include <vector>

#include "sf3d/tensor.hpp"

namespace sf3d {

struct SoftDiceConfig {
    float smooth = 1e-5f;
    bool include_background = false;

    void validate() const;
};

/// Throws unless target is [B, spatial...] matching logits [B, K, spatial...]
/// with every label in [0, K).
void check_segmentation_target(const Tensor& logits, const IntTensor& target);

/// 1 - mean soft dice over the included classes. Sums run over the whole batch.
Tensor dice_loss(const Tensor& logits, const IntTensor& target, const SoftDiceConfig& cfg = {});
/// Mean over voxels of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, const IntTensor& target);
/// 0.5 * dice_loss + 0.5 * cross_entropy.
Tensor dice_ce_loss(const Tensor& logits, const IntTensor& target, const SoftDiceConfig& cfg = {});

struct DiceScore {
    std::vector<double> per_class;  // index 0 is background
    double mean_foreground = 0.0;
};

/// Hard dice 2|A∩B|/(|A|+|B|) per class; a class absent from both masks scores 1.
DiceScore dice_score(const IntTensor& pred, const IntTensor& target, int num_classes);

/// Per-voxel argmax over the class axis: [B, K, spatial...] -> [B, spatial...].
IntTensor argmax_labels(const Tensor& logits);

}  // namespace sf3d
