#include <algorithm>

#include "eigen_maps.hpp"
#include "sf3d/ops.hpp"

namespace sf3d {

using detail::as_matrix;

int64_t conv_output_extent(int64_t input, int kernel, int stride, int padding) {
    return (input + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
    int64_t batch, cin, d, h, w;
    int64_t cout, kd, kh, kw;
    int64_t od, oh, ow;
    int sd, sh, sw, pd, ph, pw;
    int groups;

    int64_t in_volume() const { return d * h * w; }
    int64_t out_volume() const { return od * oh * ow; }
    int64_t taps() const { return kd * kh * kw; }
    int64_t cin_g() const { return cin / groups; }
    int64_t cout_g() const { return cout / groups; }
    bool pointwise() const {
        return kd == 1 && kh == 1 && kw == 1 && sd == 1 && sh == 1 && sw == 1 && pd == 0 && ph == 0 && pw == 0;
    }
    bool depthwise() const { return cin_g() == 1 && cout_g() == 1; }
};

// Unfolds channels [c0, c0 + channels) of one batch item into a
// (channels * taps) x out_volume column matrix.
void im2col(const ConvGeometry& g, const float* x, int64_t channels, float* col) {
    const int64_t vol_out = g.out_volume();
    for (int64_t c = 0; c < channels; ++c) {
        const float* xc = x + c * g.in_volume();
        for (int64_t a = 0; a < g.kd; ++a)
            for (int64_t bb = 0; bb < g.kh; ++bb)
                for (int64_t e = 0; e < g.kw; ++e) {
                    float* row = col + ((c * g.kd + a) * g.kh * g.kw + bb * g.kw + e) * vol_out;
                    for (int64_t z = 0; z < g.od; ++z) {
                        const int64_t iz = z * g.sd - g.pd + a;
                        for (int64_t y = 0; y < g.oh; ++y) {
                            const int64_t iy = y * g.sh - g.ph + bb;
                            float* dst = row + (z * g.oh + y) * g.ow;
                            if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) {
                                std::fill(dst, dst + g.ow, 0.0f);
                                continue;
                            }
                            const float* src = xc + (iz * g.h + iy) * g.w;
                            for (int64_t xo = 0; xo < g.ow; ++xo) {
                                const int64_t ix = xo * g.sw - g.pw + e;
                                dst[xo] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
                            }
                        }
                    }
                }
    }
}

void col2im_add(const ConvGeometry& g, const float* col, int64_t channels, float* dx) {
    const int64_t vol_out = g.out_volume();
    for (int64_t c = 0; c < channels; ++c) {
        float* xc = dx + c * g.in_volume();
        for (int64_t a = 0; a < g.kd; ++a)
            for (int64_t bb = 0; bb < g.kh; ++bb)
                for (int64_t e = 0; e < g.kw; ++e) {
                    const float* row = col + ((c * g.kd + a) * g.kh * g.kw + bb * g.kw + e) * vol_out;
                    for (int64_t z = 0; z < g.od; ++z) {
                        const int64_t iz = z * g.sd - g.pd + a;
                        if (iz < 0 || iz >= g.d) continue;
                        for (int64_t y = 0; y < g.oh; ++y) {
                            const int64_t iy = y * g.sh - g.ph + bb;
                            if (iy < 0 || iy >= g.h) continue;
                            const float* src = row + (z * g.oh + y) * g.ow;
                            float* dst = xc + (iz * g.h + iy) * g.w;
                            for (int64_t xo = 0; xo < g.ow; ++xo) {
                                const int64_t ix = xo * g.sw - g.pw + e;
                                if (ix >= 0 && ix < g.w) dst[ix] += src[xo];
                            }
                        }
                    }
                }
    }
}

// Depthwise: one filter per channel, applied directly. Walks taps in the
// outer loops so the innermost loop runs over a contiguous output row:
// fn(out_offset, in_offset, count, tap) covers out[o + k] <-> in[i + k * sw].
template <typename Fn>
void for_each_depthwise_row(const ConvGeometry& g, Fn&& fn) {
    for (int64_t a = 0; a < g.kd; ++a)
        for (int64_t bb = 0; bb < g.kh; ++bb)
            for (int64_t e = 0; e < g.kw; ++e) {
                const int64_t shift = g.pw - e;
                const int64_t lo = shift > 0 ? (shift + g.sw - 1) / g.sw : 0;
                const int64_t hi = std::min<int64_t>(g.ow - 1, (g.w - 1 + shift) / g.sw);
                if (hi < lo) continue;
                const int64_t t = (a * g.kh + bb) * g.kw + e;
                for (int64_t z = 0; z < g.od; ++z) {
                    const int64_t iz = z * g.sd - g.pd + a;
                    if (iz < 0 || iz >= g.d) continue;
                    for (int64_t y = 0; y < g.oh; ++y) {
                        const int64_t iy = y * g.sh - g.ph + bb;
                        if (iy < 0 || iy >= g.h) continue;
                        fn((z * g.oh + y) * g.ow + lo, (iz * g.h + iy) * g.w + lo * g.sw - shift, hi - lo + 1, t);
                    }
                }
            }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dParams& params) {
    check(x.rank() == 5, ErrorCode::ShapeMismatch, "conv3d input must be [B, C, D, H, W], got " + shape_to_string(x.shape()));
    check(weight.rank() == 5, ErrorCode::ShapeMismatch, "conv3d weight must be [Cout, Cin/g, kd, kh, kw]");
    check(params.groups >= 1, ErrorCode::InvalidGroups, "groups must be positive");
    for (int i = 0; i < 3; ++i) {
        check(params.stride[i] >= 1, ErrorCode::InvalidArgument, "conv3d stride must be positive");
        check(params.padding[i] >= 0, ErrorCode::InvalidArgument, "conv3d padding must be non-negative");
    }

    ConvGeometry g{};
    g.batch = x.dim(0);
    g.cin = x.dim(1);
    g.d = x.dim(2);
    g.h = x.dim(3);
    g.w = x.dim(4);
    g.cout = weight.dim(0);
    g.kd = weight.dim(2);
    g.kh = weight.dim(3);
    g.kw = weight.dim(4);
    g.sd = params.stride[0];
    g.sh = params.stride[1];
    g.sw = params.stride[2];
    g.pd = params.padding[0];
    g.ph = params.padding[1];
    g.pw = params.padding[2];
    g.groups = params.groups;

    check(g.cin % g.groups == 0, ErrorCode::InvalidGroups,
          "input channels " + std::to_string(g.cin) + " not divisible by groups " + std::to_string(g.groups));
    check(g.cout % g.groups == 0, ErrorCode::InvalidGroups,
          "output channels " + std::to_string(g.cout) + " not divisible by groups " + std::to_string(g.groups));
    check(weight.dim(1) == g.cin_g(), ErrorCode::ShapeMismatch,
          "conv3d weight " + shape_to_string(weight.shape()) + " does not match input " + shape_to_string(x.shape()));
    check(g.kd <= g.d + 2 * g.pd && g.kh <= g.h + 2 * g.ph && g.kw <= g.w + 2 * g.pw, ErrorCode::ShapeMismatch,
          "kernel larger than padded input");
    const bool has_bias = bias.defined();
    if (has_bias)
        check(bias.rank() == 1 && bias.dim(0) == g.cout, ErrorCode::ShapeMismatch, "conv3d bias must be [Cout]");

    g.od = conv_output_extent(g.d, static_cast<int>(g.kd), g.sd, g.pd);
    g.oh = conv_output_extent(g.h, static_cast<int>(g.kh), g.sh, g.ph);
    g.ow = conv_output_extent(g.w, static_cast<int>(g.kw), g.sw, g.pw);

    const int64_t vol_out = g.out_volume();
    const int64_t rows_k = g.cin_g() * g.taps();
    FloatBuffer out(static_cast<size_t>(g.batch * g.cout * vol_out), 0.0f);

    if (g.depthwise()) {
        for (int64_t b = 0; b < g.batch; ++b)
            for (int64_t c = 0; c < g.cout; ++c) {
                const float* xc = x.ptr() + (b * g.cin + c) * g.in_volume();
                const float* wc = weight.ptr() + c * g.taps();
                float* oc = out.data() + (b * g.cout + c) * vol_out;
                for_each_depthwise_row(g, [&](int64_t o, int64_t i, int64_t n, int64_t t) {
                    const float wt = wc[t];
                    for (int64_t k = 0; k < n; ++k) oc[o + k] += wt * xc[i + k * g.sw];
                });
            }
    } else {
        FloatBuffer col(g.pointwise() ? 0 : static_cast<size_t>(rows_k * vol_out));
        for (int64_t b = 0; b < g.batch; ++b)
            for (int64_t gi = 0; gi < g.groups; ++gi) {
                const float* xg = x.ptr() + (b * g.cin + gi * g.cin_g()) * g.in_volume();
                const float* colp = xg;
                if (!g.pointwise()) {
                    im2col(g, xg, g.cin_g(), col.data());
                    colp = col.data();
                }
                as_matrix(out.data() + (b * g.cout + gi * g.cout_g()) * vol_out, g.cout_g(), vol_out).noalias() =
                    as_matrix(weight.ptr() + gi * g.cout_g() * rows_k, g.cout_g(), rows_k) *
                    as_matrix(colp, rows_k, vol_out);
            }
    }
    if (has_bias)
        for (int64_t b = 0; b < g.batch; ++b)
            for (int64_t c = 0; c < g.cout; ++c) {
                float* oc = out.data() + (b * g.cout + c) * vol_out;
                const float bv = bias.ptr()[c];
                for (int64_t p = 0; p < vol_out; ++p) oc[p] += bv;
            }
    detail::record_flops(OpKind::Conv3d, static_cast<uint64_t>(2 * g.batch * g.cout * rows_k * vol_out +
                                                               (has_bias ? g.batch * g.cout * vol_out : 0)));

    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return detail::make_result(
        {g.batch, g.cout, g.od, g.oh, g.ow}, std::move(out), OpKind::Conv3d, std::move(inputs),
        [g, has_bias](TapeNode& node, const TensorImpl& res) {
            TensorImpl& xi = *node.inputs[0];
            TensorImpl& wi = *node.inputs[1];
            const int64_t vol_out = g.out_volume();
            const int64_t rows_k = g.cin_g() * g.taps();
            const float* gout = res.grad.data();

            if (has_bias && node.inputs[2]->requires_grad) {
                float* gb = node.inputs[2]->grad_buffer();
                for (int64_t b = 0; b < g.batch; ++b)
                    for (int64_t c = 0; c < g.cout; ++c) {
                        const float* go = gout + (b * g.cout + c) * vol_out;
                        float acc = 0.0f;
                        for (int64_t p = 0; p < vol_out; ++p) acc += go[p];
                        gb[c] += acc;
                    }
            }

            if (g.depthwise()) {
                float* gx = xi.requires_grad ? xi.grad_buffer() : nullptr;
                float* gw = wi.requires_grad ? wi.grad_buffer() : nullptr;
                for (int64_t b = 0; b < g.batch; ++b)
                    for (int64_t c = 0; c < g.cout; ++c) {
                        const int64_t xoff = (b * g.cin + c) * g.in_volume();
                        const float* xc = xi.data.data() + xoff;
                        const float* wc = wi.data.data() + c * g.taps();
                        const float* go = gout + (b * g.cout + c) * vol_out;
                        for_each_depthwise_row(g, [&](int64_t o, int64_t i, int64_t n, int64_t t) {
                            if (gx) {
                                const float wt = wc[t];
                                float* gxc = gx + xoff + i;
                                for (int64_t k = 0; k < n; ++k) gxc[k * g.sw] += wt * go[o + k];
                            }
                            if (gw) {
                                float acc = 0.0f;
                                for (int64_t k = 0; k < n; ++k) acc += xc[i + k * g.sw] * go[o + k];
                                gw[c * g.taps() + t] += acc;
                            }
                        });
                    }
                return;
            }

            FloatBuffer col(g.pointwise() ? 0 : static_cast<size_t>(rows_k * vol_out));
            FloatBuffer dcol;
            if (xi.requires_grad && !g.pointwise()) dcol.resize(static_cast<size_t>(rows_k * vol_out));
            for (int64_t b = 0; b < g.batch; ++b)
                for (int64_t gi = 0; gi < g.groups; ++gi) {
                    const int64_t xoff = (b * g.cin + gi * g.cin_g()) * g.in_volume();
                    const auto go = as_matrix(gout + (b * g.cout + gi * g.cout_g()) * vol_out, g.cout_g(), vol_out);
                    const auto wg = as_matrix(wi.data.data() + gi * g.cout_g() * rows_k, g.cout_g(), rows_k);
                    if (wi.requires_grad) {
                        const float* colp = xi.data.data() + xoff;
                        if (!g.pointwise()) {
                            im2col(g, colp, g.cin_g(), col.data());
                            colp = col.data();
                        }
                        as_matrix(wi.grad_buffer() + gi * g.cout_g() * rows_k, g.cout_g(), rows_k).noalias() +=
                            go * as_matrix(colp, rows_k, vol_out).transpose();
                    }
                    if (xi.requires_grad) {
                        if (g.pointwise()) {
                            as_matrix(xi.grad_buffer() + xoff, rows_k, vol_out).noalias() += wg.transpose() * go;
                        } else {
                            as_matrix(dcol.data(), rows_k, vol_out).noalias() = wg.transpose() * go;
                            col2im_add(g, dcol.data(), g.cin_g(), xi.grad_buffer() + xoff);
                        }
                    }
                }
        });
}

}  // namespace sf3d
