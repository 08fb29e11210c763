#pragma once

#include <array>
#include <vector>

#include "sf3d/tensor.hpp"

namespace sf3d {

// Linear algebra. matmul: a[..., m, k] x b[..., k, n]; b may also be a plain
// [k, n] matrix shared across a's leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

/// y = x W^T + b over the last axis. weight is [out, in]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv3dParams {
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};
    int groups = 1;
};

/// Cross-correlation over x[B, Cin, D, H, W] with w[Cout, Cin/groups, kd, kh, kw].
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dParams& params);

int64_t conv_output_extent(int64_t input, int kernel, int stride, int padding);

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor softmax(const Tensor& x, int axis);
Tensor gelu(const Tensor& x);

/// Trilinear interpolation (align_corners = false) of x[B, C, D, H, W] by an
/// integer factor on every spatial axis.
Tensor trilinear_upsample(const Tensor& x, int scale);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor concat(const std::vector<Tensor>& parts, int axis);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace sf3d
