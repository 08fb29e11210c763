#include "eigen_maps.hpp"
#include "sf3d/ops.hpp"

namespace sf3d {

using detail::as_matrix;

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() >= 2 && b.rank() >= 2, ErrorCode::ShapeMismatch, "matmul needs rank >= 2 operands");
    const int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    check(b.dim(-2) == k, ErrorCode::ShapeMismatch,
          "matmul inner dims differ: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
    const bool shared_b = b.rank() == 2;
    if (!shared_b) {
        check(a.rank() == b.rank() &&
                  std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()),
              ErrorCode::ShapeMismatch,
              "matmul batch dims differ: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
    }
    const int64_t batch = a.numel() / (m * k);

    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    FloatBuffer out(static_cast<size_t>(batch * m * n));
    for (int64_t i = 0; i < batch; ++i) {
        const float* bp = shared_b ? b.ptr() : b.ptr() + i * k * n;
        as_matrix(out.data() + i * m * n, m, n).noalias() =
            as_matrix(a.ptr() + i * m * k, m, k) * as_matrix(bp, k, n);
    }
    detail::record_flops(OpKind::MatMul, static_cast<uint64_t>(2 * batch * m * n * k));

    return detail::make_result(
        std::move(out_shape), std::move(out), OpKind::MatMul, {a, b},
        [batch, m, k, n, shared_b](TapeNode& node, const TensorImpl& res) {
            TensorImpl& ai = *node.inputs[0];
            TensorImpl& bi = *node.inputs[1];
            for (int64_t i = 0; i < batch; ++i) {
                const auto gout = as_matrix(res.grad.data() + i * m * n, m, n);
                const float* bp = shared_b ? bi.data.data() : bi.data.data() + i * k * n;
                if (ai.requires_grad)
                    as_matrix(ai.grad_buffer() + i * m * k, m, k).noalias() += gout * as_matrix(bp, k, n).transpose();
                if (bi.requires_grad) {
                    float* gb = shared_b ? bi.grad_buffer() : bi.grad_buffer() + i * k * n;
                    as_matrix(gb, k, n).noalias() += as_matrix(ai.data.data() + i * m * k, m, k).transpose() * gout;
                }
            }
        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check(weight.rank() == 2, ErrorCode::ShapeMismatch, "linear weight must be [out, in]");
    const int64_t out_f = weight.dim(0), in_f = weight.dim(1);
    check(x.dim(-1) == in_f, ErrorCode::ShapeMismatch,
          "linear input " + shape_to_string(x.shape()) + " vs weight " + shape_to_string(weight.shape()));
    const bool has_bias = bias.defined();
    if (has_bias)
        check(bias.rank() == 1 && bias.dim(0) == out_f, ErrorCode::ShapeMismatch, "linear bias must be [out]");
    const int64_t rows = x.numel() / in_f;

    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    FloatBuffer out(static_cast<size_t>(rows * out_f));
    auto y = as_matrix(out.data(), rows, out_f);
    y.noalias() = as_matrix(x.ptr(), rows, in_f) * as_matrix(weight.ptr(), out_f, in_f).transpose();
    if (has_bias) y.rowwise() += detail::as_row(bias.ptr(), out_f);
    detail::record_flops(OpKind::Linear,
                         static_cast<uint64_t>(2 * rows * in_f * out_f + (has_bias ? rows * out_f : 0)));

    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return detail::make_result(
        std::move(out_shape), std::move(out), OpKind::Linear, std::move(inputs),
        [rows, in_f, out_f, has_bias](TapeNode& node, const TensorImpl& res) {
            TensorImpl& xi = *node.inputs[0];
            TensorImpl& wi = *node.inputs[1];
            const auto gout = as_matrix(res.grad.data(), rows, out_f);
            if (xi.requires_grad)
                as_matrix(xi.grad_buffer(), rows, in_f).noalias() += gout * as_matrix(wi.data.data(), out_f, in_f);
            if (wi.requires_grad)
                as_matrix(wi.grad_buffer(), out_f, in_f).noalias() +=
                    gout.transpose() * as_matrix(xi.data.data(), rows, in_f);
            if (has_bias && node.inputs[2]->requires_grad)
                detail::as_row(node.inputs[2]->grad_buffer(), out_f) += gout.colwise().sum();
        });
}

}  // namespace sf3d
