#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "blend/ad/params.hpp"
#include "blend/ad/tensor.hpp"

namespace blend::ad {

enum class OpKind : std::uint8_t {
    Leaf,
    Param,
    Conv2d,
    ChannelBias,
    MaxPool,
    Relu,
    Sigmoid,
    Tanh,
    Dense,
    Add,
    Hadamard,
    Concat,
    Slice,
    Reshape,
    Softmax,
    CrossEntropy,
    Sum,
    Scale,
};

std::string_view op_name(OpKind op);

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives
/// and has not been cleared.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
};

template <typename T>
struct Node {
    OpKind op = OpKind::Leaf;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    Tensor<T> value;
    Tensor<T> grad;
    Parameter<T>* param = nullptr;
    int aux[4] = {0, 0, 0, 0};
    std::vector<std::uint32_t> index;
    std::vector<T> weights;
};

struct TapeDiagnostics {
    /// Count of cross-entropy log terms whose predicted probability was
    /// clamped to the floor.
    std::size_t clamped_log_terms = 0;
};

/// Reverse-mode recording of one forward computation. Nodes are appended in
/// evaluation order, so the graph is acyclic by construction and backward
/// walks the node list in reverse.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Constant (or differentiable, when `requires_grad`) input.
    Var<T> input(Tensor<T> value, bool requires_grad = false);
    /// Parameter leaf; gradients accumulate into `p.grad` directly.
    Var<T> param(Parameter<T>& p);

    /// Seeds d(root)/d(root) = `seed` and propagates. Root must hold exactly
    /// one value.
    void backward(Var<T> root, T seed = T{1});

    /// Gradient of the last backward root w.r.t. `v`; zeros if unreached.
    Tensor<T> grad(Var<T> v) const;

    const Tensor<T>& value(Var<T> v) const;
    std::size_t size() const noexcept { return nodes_.size(); }
    void clear();

    TapeDiagnostics& diagnostics() noexcept { return diag_; }
    const TapeDiagnostics& diagnostics() const noexcept { return diag_; }

    /// Appends an op node. `value` must already be computed.
    Var<T> push(OpKind op, std::vector<std::uint32_t> parents, Tensor<T> value);
    Node<T>& node(std::uint32_t id) { return nodes_[id]; }
    const Node<T>& node(std::uint32_t id) const { return nodes_[id]; }

    /// Gradient buffer for a node, allocated (zero) on first use.
    Tensor<T>& grad_buffer(std::uint32_t id);

private:
    void backward_node(std::uint32_t id);

    std::vector<Node<T>> nodes_;
    TapeDiagnostics diag_;
};

extern template class Tape<float>;
extern template class Tape<double>;

// Differentiable primitives. Every op validates shapes and throws
// DimensionError naming the offending axis.

/// Stride-1 cross-correlation. input [C_in,H,W], kernels [C_out,C_in,kh,kw].
/// Output [C_out, H-kh+1+2p, W-kw+1+2p].
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernels, int padding);

/// Adds b[c] to every element of channel c of x [C,...].
template <typename T>
Var<T> channel_bias(Var<T> x, Var<T> bias);

/// Non-overlapping max pooling with stride equal to the window. Trailing rows
/// and columns that do not fill a window are dropped. Backward routes the
/// gradient to the first maximal element in row-major order.
template <typename T>
Var<T> maxpool(Var<T> input, int pool_h, int pool_w);

template <typename T>
Var<T> maxpool2x2(Var<T> input) {
    return maxpool(input, 2, 2);
}

template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);

/// weights [m,n] * input [n] (+ bias [m]).
template <typename T>
Var<T> dense(Var<T> input, Var<T> weights, Var<T> bias);
template <typename T>
Var<T> dense(Var<T> input, Var<T> weights);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b);

/// Concatenates flattened inputs into one vector.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts);

/// Elements [begin, begin+length) of a flattened input.
template <typename T>
Var<T> slice(Var<T> x, std::size_t begin, std::size_t length);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
template <typename T>
Var<T> flatten(Var<T> x) {
    return reshape(x, Shape{x.value().size()});
}

/// Max-subtracted softmax over a vector. Throws NumericError on a non-finite
/// logit.
template <typename T>
Var<T> softmax(Var<T> logits);

/// Floor applied to predicted probabilities inside the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// -sum_k probs[k] * log(predicted[ids[k]]). Sparse target: only the listed
/// classes contribute. Probabilities below kProbabilityFloor are clamped and
/// counted in the tape diagnostics.
template <typename T>
Var<T> cross_entropy(std::span<const std::uint32_t> ids, std::span<const double> probs,
                     Var<T> predicted);

template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> scale(Var<T> x, double factor);

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
    return add(a, b);
}
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
    return hadamard(a, b);
}

}  // namespace blend::ad
