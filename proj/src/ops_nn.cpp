#include <cmath>
#include <numbers>

#include "sf3d/flop_convention.hpp"
#include "sf3d/ops.hpp"

namespace sf3d {

namespace fc = flop_convention;

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const int64_t channels = x.dim(-1);
    check(gamma.rank() == 1 && gamma.dim(0) == channels, ErrorCode::ShapeMismatch,
          "layernorm gamma " + shape_to_string(gamma.shape()) + " vs input " + shape_to_string(x.shape()));
    check(beta.rank() == 1 && beta.dim(0) == channels, ErrorCode::ShapeMismatch,
          "layernorm beta " + shape_to_string(beta.shape()) + " vs input " + shape_to_string(x.shape()));
    const int64_t rows = x.numel() / channels;

    FloatBuffer out(x.data().size());
    FloatBuffer rstd(static_cast<size_t>(rows));
    FloatBuffer means(static_cast<size_t>(rows));
    const float* g = gamma.ptr();
    const float* bt = beta.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x.ptr() + r * channels;
        double acc = 0.0;
        for (int64_t c = 0; c < channels; ++c) acc += xr[c];
        const double mu = acc / static_cast<double>(channels);
        double var = 0.0;
        for (int64_t c = 0; c < channels; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= static_cast<double>(channels);
        const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
        means[r] = static_cast<float>(mu);
        rstd[r] = rs;
        float* yr = out.data() + r * channels;
        for (int64_t c = 0; c < channels; ++c) yr[c] = (xr[c] - means[r]) * rs * g[c] + bt[c];
    }
    detail::record_flops(OpKind::LayerNorm, fc::kLayerNorm * static_cast<uint64_t>(x.numel()));

    return detail::make_result(
        x.shape(), std::move(out), OpKind::LayerNorm, {x, gamma, beta},
        [rows, channels, means = std::move(means), rstd = std::move(rstd)](TapeNode& node, const TensorImpl& res) {
            TensorImpl& xi = *node.inputs[0];
            TensorImpl& gi = *node.inputs[1];
            TensorImpl& bi = *node.inputs[2];
            float* gx = xi.requires_grad ? xi.grad_buffer() : nullptr;
            float* gg = gi.requires_grad ? gi.grad_buffer() : nullptr;
            float* gb = bi.requires_grad ? bi.grad_buffer() : nullptr;
            FloatBuffer xhat(static_cast<size_t>(channels));
            for (int64_t r = 0; r < rows; ++r) {
                const float* xr = xi.data.data() + r * channels;
                const float* dy = res.grad.data() + r * channels;
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int64_t c = 0; c < channels; ++c) {
                    xhat[c] = (xr[c] - means[r]) * rstd[r];
                    const float dxhat = dy[c] * gi.data[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat[c];
                    if (gg) gg[c] += dy[c] * xhat[c];
                    if (gb) gb[c] += dy[c];
                }
                if (!gx) continue;
                const float m1 = static_cast<float>(sum_dxhat / static_cast<double>(channels));
                const float m2 = static_cast<float>(sum_dxhat_xhat / static_cast<double>(channels));
                float* gxr = gx + r * channels;
                for (int64_t c = 0; c < channels; ++c)
                    gxr[c] += rstd[r] * (dy[c] * gi.data[c] - m1 - xhat[c] * m2);
            }
        });
}

Tensor softmax(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    check(axis >= 0 && axis < r, ErrorCode::InvalidArgument, "softmax axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
    const int64_t len = x.dim(axis);

    FloatBuffer out(x.data().size());
    const float* xp = x.ptr();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            float mx = xp[base];
            for (int64_t k = 1; k < len; ++k) mx = std::max(mx, xp[base + k * inner]);
            float total = 0.0f;
            for (int64_t k = 0; k < len; ++k) {
                const float e = std::exp(xp[base + k * inner] - mx);
                out[base + k * inner] = e;
                total += e;
            }
            const float inv = 1.0f / total;
            for (int64_t k = 0; k < len; ++k) out[base + k * inner] *= inv;
        }
    detail::record_flops(OpKind::Softmax, fc::kSoftmax * static_cast<uint64_t>(x.numel()));

    return detail::make_result(x.shape(), std::move(out), OpKind::Softmax, {x},
                               [outer, inner, len](TapeNode& node, const TensorImpl& res) {
                                   TensorImpl& xi = *node.inputs[0];
                                   float* gx = xi.grad_buffer();
                                   const float* y = res.data.data();
                                   const float* dy = res.grad.data();
                                   for (int64_t o = 0; o < outer; ++o)
                                       for (int64_t in = 0; in < inner; ++in) {
                                           const int64_t base = o * len * inner + in;
                                           float dot = 0.0f;
                                           for (int64_t k = 0; k < len; ++k)
                                               dot += dy[base + k * inner] * y[base + k * inner];
                                           for (int64_t k = 0; k < len; ++k) {
                                               const int64_t i = base + k * inner;
                                               gx[i] += y[i] * (dy[i] - dot);
                                           }
                                       }
                               });
}

namespace {

constexpr float kGeluCoeff = 0.044715f;
const float kSqrt2OverPi = static_cast<float>(std::sqrt(2.0 / std::numbers::pi));

}  // namespace

Tensor gelu(const Tensor& x) {
    FloatBuffer out(x.data().size());
    const float* xp = x.ptr();
    for (size_t i = 0; i < out.size(); ++i) {
        const float v = xp[i];
        out[i] = 0.5f * v * (1.0f + std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v)));
    }
    detail::record_flops(OpKind::Gelu, fc::kGelu * static_cast<uint64_t>(x.numel()));

    return detail::make_result(x.shape(), std::move(out), OpKind::Gelu, {x}, [](TapeNode& node, const TensorImpl& res) {
        TensorImpl& xi = *node.inputs[0];
        float* gx = xi.grad_buffer();
        for (size_t i = 0; i < xi.data.size(); ++i) {
            const float v = xi.data[i];
            const float t = std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v));
            const float du = kSqrt2OverPi * (1.0f + 3.0f * kGeluCoeff * v * v);
            gx[i] += res.grad[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
        }
    });
}

namespace {

struct AxisTaps {
    std::vector<int64_t> lo, hi;
    FloatBuffer w_lo, w_hi;
};

AxisTaps axis_taps(int64_t in, int scale) {
    AxisTaps t;
    const int64_t out = in * scale;
    t.lo.resize(out);
    t.hi.resize(out);
    t.w_lo.resize(out);
    t.w_hi.resize(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) / scale - 0.5;
        if (src < 0.0) src = 0.0;
        const auto i0 = static_cast<int64_t>(std::floor(src));
        const int64_t i1 = std::min(i0 + 1, in - 1);
        const double frac = src - static_cast<double>(i0);
        t.lo[o] = i0;
        t.hi[o] = i1;
        t.w_lo[o] = static_cast<float>(1.0 - frac);
        t.w_hi[o] = static_cast<float>(frac);
    }
    return t;
}

// Visits every (output index, input index, weight) triple of the 8-tap stencil.
template <typename Fn>
void for_each_trilinear_tap(const AxisTaps& td, const AxisTaps& th, const AxisTaps& tw, int64_t h, int64_t w,
                            Fn&& fn) {
    const auto od = static_cast<int64_t>(td.lo.size());
    const auto oh = static_cast<int64_t>(th.lo.size());
    const auto ow = static_cast<int64_t>(tw.lo.size());
    for (int64_t z = 0; z < od; ++z)
        for (int64_t y = 0; y < oh; ++y)
            for (int64_t xo = 0; xo < ow; ++xo) {
                const int64_t o = (z * oh + y) * ow + xo;
                const int64_t zs[2] = {td.lo[z], td.hi[z]};
                const float zw[2] = {td.w_lo[z], td.w_hi[z]};
                const int64_t ys[2] = {th.lo[y], th.hi[y]};
                const float yw[2] = {th.w_lo[y], th.w_hi[y]};
                const int64_t xs[2] = {tw.lo[xo], tw.hi[xo]};
                const float xw[2] = {tw.w_lo[xo], tw.w_hi[xo]};
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c)
                            fn(o, (zs[a] * h + ys[b]) * w + xs[c], zw[a] * yw[b] * xw[c]);
            }
}

}  // namespace

Tensor trilinear_upsample(const Tensor& x, int scale) {
    check(x.rank() == 5, ErrorCode::ShapeMismatch, "trilinear_upsample expects [B, C, D, H, W]");
    check(scale >= 1, ErrorCode::InvalidArgument, "upsample scale must be >= 1");
    const int64_t planes = x.dim(0) * x.dim(1);
    const int64_t d = x.dim(2), h = x.dim(3), w = x.dim(4);
    const int64_t in_vol = d * h * w;
    const int64_t out_vol = in_vol * scale * scale * scale;
    auto td = std::make_shared<AxisTaps>(axis_taps(d, scale));
    auto th = std::make_shared<AxisTaps>(axis_taps(h, scale));
    auto tw = std::make_shared<AxisTaps>(axis_taps(w, scale));

    FloatBuffer out(static_cast<size_t>(planes * out_vol), 0.0f);
    for (int64_t p = 0; p < planes; ++p) {
        const float* xp = x.ptr() + p * in_vol;
        float* op = out.data() + p * out_vol;
        for_each_trilinear_tap(*td, *th, *tw, h, w, [&](int64_t o, int64_t i, float wt) { op[o] += wt * xp[i]; });
    }
    detail::record_flops(OpKind::Upsample, fc::kTrilinear * static_cast<uint64_t>(planes * out_vol));

    return detail::make_result(
        {x.dim(0), x.dim(1), d * scale, h * scale, w * scale}, std::move(out), OpKind::Upsample, {x},
        [=](TapeNode& node, const TensorImpl& res) {
            TensorImpl& xi = *node.inputs[0];
            float* gx = xi.grad_buffer();
            for (int64_t p = 0; p < planes; ++p) {
                const float* go = res.grad.data() + p * out_vol;
                float* gp = gx + p * in_vol;
                for_each_trilinear_tap(*td, *th, *tw, h, w, [&](int64_t o, int64_t i, float wt) { gp[i] += wt * go[o]; });
            }
        });
}

}  // namespace sf3d
