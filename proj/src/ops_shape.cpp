#include <algorithm>
#include <numeric>

#include "sf3d/flop_convention.hpp"
#include "sf3d/ops.hpp"

namespace sf3d {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(op) + " operands differ: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
}

void record_elementwise(OpKind kind, int64_t n) {
    detail::record_flops(kind, flop_convention::kElementwise * static_cast<uint64_t>(n));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    FloatBuffer out(a.data().begin(), a.data().end());
    const float* bp = b.ptr();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
    record_elementwise(OpKind::Add, a.numel());
    return detail::make_result(a.shape(), std::move(out), OpKind::Add, {a, b}, [](TapeNode& node, const TensorImpl& res) {
        for (auto& in : node.inputs) {
            if (!in->requires_grad) continue;
            float* g = in->grad_buffer();
            for (size_t i = 0; i < res.grad.size(); ++i) g[i] += res.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    FloatBuffer out(a.data().begin(), a.data().end());
    const float* bp = b.ptr();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bp[i];
    record_elementwise(OpKind::Sub, a.numel());
    return detail::make_result(a.shape(), std::move(out), OpKind::Sub, {a, b}, [](TapeNode& node, const TensorImpl& res) {
        for (size_t k = 0; k < 2; ++k) {
            TensorImpl& in = *node.inputs[k];
            if (!in.requires_grad) continue;
            const float sign = k == 0 ? 1.0f : -1.0f;
            float* g = in.grad_buffer();
            for (size_t i = 0; i < res.grad.size(); ++i) g[i] += sign * res.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    FloatBuffer out(a.data().begin(), a.data().end());
    const float* bp = b.ptr();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bp[i];
    record_elementwise(OpKind::Mul, a.numel());
    return detail::make_result(a.shape(), std::move(out), OpKind::Mul, {a, b}, [](TapeNode& node, const TensorImpl& res) {
        TensorImpl& ai = *node.inputs[0];
        TensorImpl& bi = *node.inputs[1];
        if (ai.requires_grad) {
            float* g = ai.grad_buffer();
            for (size_t i = 0; i < res.grad.size(); ++i) g[i] += res.grad[i] * bi.data[i];
        }
        if (bi.requires_grad) {
            float* g = bi.grad_buffer();
            for (size_t i = 0; i < res.grad.size(); ++i) g[i] += res.grad[i] * ai.data[i];
        }
    });
}

Tensor scale(const Tensor& x, float factor) {
    FloatBuffer out(x.data().begin(), x.data().end());
    for (float& v : out) v *= factor;
    record_elementwise(OpKind::Scale, x.numel());
    return detail::make_result(x.shape(), std::move(out), OpKind::Scale, {x},
                               [factor](TapeNode& node, const TensorImpl& res) {
                                   float* g = node.inputs[0]->grad_buffer();
                                   for (size_t i = 0; i < res.grad.size(); ++i) g[i] += factor * res.grad[i];
                               });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    record_elementwise(OpKind::Sum, x.numel());
    return detail::make_result({1}, {static_cast<float>(acc)}, OpKind::Sum, {x},
                               [](TapeNode& node, const TensorImpl& res) {
                                   TensorImpl& xi = *node.inputs[0];
                                   float* g = xi.grad_buffer();
                                   for (size_t i = 0; i < xi.data.size(); ++i) g[i] += res.grad[0];
                               });
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    const auto n = static_cast<double>(x.numel());
    record_elementwise(OpKind::Mean, x.numel());
    return detail::make_result({1}, {static_cast<float>(acc / n)}, OpKind::Mean, {x},
                               [n](TapeNode& node, const TensorImpl& res) {
                                   TensorImpl& xi = *node.inputs[0];
                                   float* g = xi.grad_buffer();
                                   const auto share = static_cast<float>(res.grad[0] / n);
                                   for (size_t i = 0; i < xi.data.size(); ++i) g[i] += share;
                               });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check(shape_numel(shape) == x.numel(), ErrorCode::ShapeMismatch,
          "cannot reshape " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
    FloatBuffer out(x.data().begin(), x.data().end());
    return detail::make_result(std::move(shape), std::move(out), OpKind::Reshape, {x},
                               [](TapeNode& node, const TensorImpl& res) {
                                   float* g = node.inputs[0]->grad_buffer();
                                   for (size_t i = 0; i < res.grad.size(); ++i) g[i] += res.grad[i];
                               });
}

namespace {

// For each output flat index, the matching input flat index.
std::vector<int64_t> permutation_gather(const Shape& in_shape, const std::vector<int>& order) {
    const size_t r = in_shape.size();
    std::vector<int64_t> in_strides(r, 1);
    for (size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    Shape out_shape(r);
    std::vector<int64_t> strides(r);
    for (size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[static_cast<size_t>(order[i])];
        strides[i] = in_strides[static_cast<size_t>(order[i])];
    }
    std::vector<int64_t> gather(static_cast<size_t>(shape_numel(in_shape)));
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    for (auto& dst : gather) {
        dst = src;
        for (size_t k = r; k-- > 0;) {
            ++idx[k];
            src += strides[k];
            if (idx[k] < out_shape[k]) break;
            src -= strides[k] * out_shape[k];
            idx[k] = 0;
        }
    }
    return gather;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& order) {
    const int r = x.rank();
    check(static_cast<int>(order.size()) == r, ErrorCode::InvalidArgument, "permute order length != rank");
    std::vector<int> sorted(order);
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < r; ++i) check(sorted[i] == i, ErrorCode::InvalidArgument, "permute order is not a permutation");

    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[i] = x.dim(order[i]);
    auto gather = std::make_shared<std::vector<int64_t>>(permutation_gather(x.shape(), order));
    FloatBuffer out(x.data().size());
    const float* xp = x.ptr();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xp[(*gather)[i]];
    return detail::make_result(std::move(out_shape), std::move(out), OpKind::Permute, {x},
                               [gather](TapeNode& node, const TensorImpl& res) {
                                   float* g = node.inputs[0]->grad_buffer();
                                   for (size_t i = 0; i < res.grad.size(); ++i) g[(*gather)[i]] += res.grad[i];
                               });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    check(!parts.empty(), ErrorCode::InvalidArgument, "concat of nothing");
    const int r = parts.front().rank();
    if (axis < 0) axis += r;
    check(axis >= 0 && axis < r, ErrorCode::InvalidArgument, "concat axis out of range");
    Shape out_shape = parts.front().shape();
    out_shape[axis] = 0;
    for (const Tensor& p : parts) {
        check(p.rank() == r, ErrorCode::ShapeMismatch, "concat rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis)
                check(p.dim(i) == parts.front().dim(i), ErrorCode::ShapeMismatch,
                      "concat extents differ: " + shape_to_string(p.shape()) + " vs " +
                          shape_to_string(parts.front().shape()));
        out_shape[axis] += p.dim(axis);
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];

    std::vector<int64_t> chunk;  // elements per outer slice for each part
    for (const Tensor& p : parts) chunk.push_back(p.dim(axis) * inner);
    const int64_t out_chunk = out_shape[axis] * inner;
    FloatBuffer out(static_cast<size_t>(shape_numel(out_shape)));
    int64_t offset = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(parts[k].ptr() + o * chunk[k], chunk[k], out.data() + o * out_chunk + offset);
        offset += chunk[k];
    }
    return detail::make_result(std::move(out_shape), std::move(out), OpKind::Concat, parts,
                               [outer, out_chunk, chunk](TapeNode& node, const TensorImpl& res) {
                                   int64_t off = 0;
                                   for (size_t k = 0; k < node.inputs.size(); ++k) {
                                       TensorImpl& in = *node.inputs[k];
                                       if (in.requires_grad) {
                                           float* g = in.grad_buffer();
                                           for (int64_t o = 0; o < outer; ++o)
                                               for (int64_t i = 0; i < chunk[k]; ++i)
                                                   g[o * chunk[k] + i] += res.grad[o * out_chunk + off + i];
                                       }
                                       off += chunk[k];
                                   }
                               });
}

}  // namespace sf3d
