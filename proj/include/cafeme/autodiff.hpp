#pragma once

#include "cafeme/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace cafeme {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted and backward walks it once in reverse.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records a leaf that receives a gradient.
    Var param(Tensor value);
    /// Records a leaf that never receives a gradient.
    Var constant(Tensor value);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    /// Gradient accumulated by the last backward(); zeros if the node was unreached.
    Tensor grad(Var v) const;

    /// Seeds d(loss)/d(loss) = 1 and propagates to every node recorded before `loss`.
    void backward(Var loss);
    void zero_grad();

    std::size_t size() const { return nodes_.size(); }

    // Internal API for primitive operations.
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    Tensor& grad_ref(std::size_t id);
    const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
};

// Primitive operations. Binary elementwise ops accept either equal shapes or a
// right operand with as many elements as the left operand has columns, which
// is broadcast over rows.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sigmoid(Var x);
Var relu(Var x);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Mean over the first axis; [B x k] -> [1 x k].
Var mean_rows(Var a);
Var sum(Var a);
/// Mean cross-entropy of row-wise softmax(logits) against class indices.
Var softmax_cross_entropy(Var logits, std::span<const int> targets);

/// Affine layer x*W + b.
inline Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

/// Numerically stable logistic function on plain doubles.
double stable_sigmoid(double x);

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr);

}  // namespace cafeme
