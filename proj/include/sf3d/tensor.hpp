#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sf3d/errors.hpp"

namespace sf3d {

using Shape = std::vector<int64_t>;

/// Every float buffer starts on a 64-byte boundary. Vectorised kernels pick
/// their peeling by address, so uniform alignment keeps results bitwise
/// identical from run to run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

enum class OpKind {
    Leaf,
    MatMul,
    Linear,
    Conv3d,
    LayerNorm,
    Softmax,
    Gelu,
    Upsample,
    Add,
    Sub,
    Mul,
    Scale,
    Sum,
    Mean,
    Reshape,
    Permute,
    Concat,
    CrossEntropy,
    DiceLoss,
};

const char* op_name(OpKind kind);

struct TensorImpl;

/// One recorded operation. `inputs` holds the operands in call order; the
/// backward closure reads the output gradient and accumulates into inputs.
/// Activations the closure needs are either the inputs themselves or are
/// captured by value when the op creates the node.
struct TapeNode {
    OpKind kind = OpKind::Leaf;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(TapeNode& node, const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    FloatBuffer data;
    FloatBuffer grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::shared_ptr<TapeNode> node;

    float* grad_buffer();  // zero-allocates on first use
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, const std::vector<float>& data);
    Tensor(Shape shape, FloatBuffer data);
    Tensor(Shape shape, std::initializer_list<float> data) : Tensor(std::move(shape), FloatBuffer(data)) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
    static Tensor full(Shape shape, float value) { return Tensor(std::move(shape), value); }
    static Tensor randn(Shape shape, std::mt19937_64& rng, float stddev = 1.0f);
    static Tensor uniform(Shape shape, std::mt19937_64& rng, float lo, float hi);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t dim(int axis) const;
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    std::span<float> data() { return impl_->data; }
    std::span<const float> data() const { return impl_->data; }
    float* ptr() { return impl_->data.data(); }
    const float* ptr() const { return impl_->data.data(); }
    float item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool value);
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const float> grad() const { return impl_->grad; }
    std::span<float> mutable_grad() { return {impl_->grad_buffer(), impl_->data.size()}; }
    void zero_grad() { impl_->grad.clear(); }

    /// True when this tensor was produced by a recorded op that backward()
    /// has not yet consumed.
    bool has_tape() const { return impl_->node != nullptr; }
    OpKind op_kind() const { return impl_->node ? impl_->node->kind : OpKind::Leaf; }

    /// Fresh tensor with a copy of the data and no tape linkage.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Dense integer label volume (segmentation masks, predicted labels).
struct IntTensor {
    Shape shape;
    std::vector<int32_t> data;

    IntTensor() = default;
    explicit IntTensor(Shape s, int32_t fill = 0) : shape(std::move(s)), data(shape_numel(shape), fill) {}
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into
/// every leaf with requires_grad; the recorded tape is released afterwards,
/// so a second call on the same loss raises DisconnectedTape.
void backward(const Tensor& loss);

/// Thread-local switch: while disabled, ops do not record tape nodes.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool value);
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Counts the arithmetic work of every forward op executed on this thread
/// while the counter is alive (innermost counter wins). Convention: one
/// multiply-add is 2 FLOPs.
class FlopCounter {
public:
    FlopCounter();
    ~FlopCounter();
    FlopCounter(const FlopCounter&) = delete;
    FlopCounter& operator=(const FlopCounter&) = delete;

    uint64_t total() const { return total_; }
    const std::map<std::string, uint64_t>& by_op() const { return by_op_; }

    void record(OpKind kind, uint64_t flops);

private:
    FlopCounter* previous_;
    uint64_t total_ = 0;
    std::map<std::string, uint64_t> by_op_;
};

namespace detail {

void record_flops(OpKind kind, uint64_t flops);

bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

/// Wraps freshly computed data as an op result, attaching a tape node when
/// gradients are needed.
Tensor make_result(Shape shape, FloatBuffer data, OpKind kind, std::vector<Tensor> inputs,
                   std::function<void(TapeNode&, const TensorImpl&)> backward_fn);

}  // namespace detail

}  // namespace sf3d
