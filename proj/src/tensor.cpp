#include "sf3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sf3d {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::InvalidGroups: return "InvalidGroups";
        case ErrorCode::NotScalar: return "NotScalar";
        case ErrorCode::DisconnectedTape: return "DisconnectedTape";
        case ErrorCode::ReductionIndivisible: return "ReductionIndivisible";
        case ErrorCode::IndivisibleExtent: return "IndivisibleExtent";
        case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::FormatError: return "FormatError";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::Linear: return "linear";
        case OpKind::Conv3d: return "conv3d";
        case OpKind::LayerNorm: return "layernorm";
        case OpKind::Softmax: return "softmax";
        case OpKind::Gelu: return "gelu";
        case OpKind::Upsample: return "upsample";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Reshape: return "reshape";
        case OpKind::Permute: return "permute";
        case OpKind::Concat: return "concat";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::DiceLoss: return "dice_loss";
    }
    return "unknown";
}

float* TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad.data();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
    for (int64_t d : shape) check(d > 0, ErrorCode::ShapeMismatch, "non-positive extent in " + shape_to_string(shape));
    impl_->data.assign(static_cast<size_t>(shape_numel(shape)), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, const std::vector<float>& data) : Tensor(std::move(shape), FloatBuffer(data.begin(), data.end())) {}

Tensor::Tensor(Shape shape, FloatBuffer data) : impl_(std::make_shared<TensorImpl>()) {
    for (int64_t d : shape) check(d > 0, ErrorCode::ShapeMismatch, "non-positive extent in " + shape_to_string(shape));
    check(shape_numel(shape) == static_cast<int64_t>(data.size()), ErrorCode::ShapeMismatch,
          "data length " + std::to_string(data.size()) + " does not match shape " + shape_to_string(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, float stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (float& v : t.impl_->data) v = dist(rng);
    return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, float lo, float hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& v : t.impl_->data) v = dist(rng);
    return t;
}

int64_t Tensor::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    check(axis >= 0 && axis < r, ErrorCode::InvalidArgument, "axis out of range");
    return impl_->shape[static_cast<size_t>(axis)];
}

float Tensor::item() const {
    check(numel() == 1, ErrorCode::NotScalar, "item() on tensor of shape " + shape_to_string(shape()));
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
    check(impl_->node == nullptr || value, ErrorCode::InvalidArgument, "cannot clear requires_grad on an op result");
    impl_->requires_grad = value;
    return *this;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

namespace {

thread_local bool grad_mode_enabled = true;
thread_local FlopCounter* active_counter = nullptr;

}  // namespace

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool value) { grad_mode_enabled = value; }

FlopCounter::FlopCounter() : previous_(active_counter) { active_counter = this; }
FlopCounter::~FlopCounter() { active_counter = previous_; }

void FlopCounter::record(OpKind kind, uint64_t flops) {
    total_ += flops;
    by_op_[op_name(kind)] += flops;
}

namespace detail {

void record_flops(OpKind kind, uint64_t flops) {
    if (active_counter != nullptr) active_counter->record(kind, flops);
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs)
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    return false;
}

Tensor make_result(Shape shape, FloatBuffer data, OpKind kind, std::vector<Tensor> inputs,
                   std::function<void(TapeNode&, const TensorImpl&)> backward_fn) {
#ifndef NDEBUG
    bool inputs_finite = true;
    for (const Tensor& in : inputs)
        if (in.defined())
            for (float v : in.data()) inputs_finite = inputs_finite && std::isfinite(v);
    if (inputs_finite)
        for (float v : data)
            if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, std::string("non-finite output from ") + op_name(kind) + " on finite inputs");
#endif
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);

    bool needs_grad = false;
    if (GradMode::enabled())
        for (const Tensor& in : inputs) needs_grad = needs_grad || (in.defined() && in.requires_grad());
    if (needs_grad) {
        auto node = std::make_shared<TapeNode>();
        node->kind = kind;
        node->inputs.reserve(inputs.size());
        for (const Tensor& in : inputs) node->inputs.push_back(in.defined() ? in.impl() : nullptr);
        node->backward = std::move(backward_fn);
        impl->node = std::move(node);
        impl->requires_grad = true;
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

void backward(const Tensor& loss) {
    check(loss.defined(), ErrorCode::DisconnectedTape, "loss is undefined");
    check(loss.numel() == 1, ErrorCode::NotScalar, "backward() needs a scalar, got " + shape_to_string(loss.shape()));
    check(loss.has_tape(), ErrorCode::DisconnectedTape, "loss is not connected to a recorded tape (already consumed?)");

    // Post-order DFS gives a topological order with inputs before outputs.
    std::vector<std::shared_ptr<TensorImpl>> order;
    std::unordered_set<const TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<TensorImpl>, size_t>> stack;
    stack.emplace_back(loss.impl(), 0);
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        const auto& inputs = impl->node->inputs;
        if (next < inputs.size()) {
            const auto child = inputs[next++];
            if (child && child->node && visited.insert(child.get()).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(impl);
            stack.pop_back();
        }
    }

    loss.impl()->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl& impl = **it;
        auto node = std::move(impl.node);
        if (!impl.grad.empty()) node->backward(*node, impl);
        // Intermediate gradients are not kept once propagated.
        impl.grad.clear();
        impl.grad.shrink_to_fit();
    }
}

}  // namespace sf3d
