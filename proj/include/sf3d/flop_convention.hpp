#pragma once

#include <cstdint>

// Per-element costs for ops that are not multiply-add bound. Matmul-like ops
// count a multiply-add as 2 FLOPs; bias and residual adds count 1 per element.
namespace sf3d::flop_convention {

inline constexpr uint64_t kElementwise = 1;
inline constexpr uint64_t kLayerNorm = 5;
inline constexpr uint64_t kSoftmax = 5;
inline constexpr uint64_t kGelu = 1;
inline constexpr uint64_t kTrilinear = 16;  // 8 taps, one multiply-add each

}  // namespace sf3d::flop_convention
