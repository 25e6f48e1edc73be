#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cellseg {

class Tape;

// Dense row-major array of doubles, optionally participating in a reverse-mode
// gradient tape. Values are required to stay finite; every operation checks its
// output and throws NumericalError otherwise.
class TensorGrid {
public:
    TensorGrid() = default;
    explicit TensorGrid(std::vector<int> shape, double fill = 0.0);
    static TensorGrid from_values(std::vector<int> shape, std::vector<double> values);
    static TensorGrid scalar_of(double v);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int size() const { return static_cast<int>(values_.size()); }

    double operator[](int i) const { return values_[static_cast<size_t>(i)]; }
    double& operator[](int i) { return values_[static_cast<size_t>(i)]; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    // Value of a single-element tensor.
    double scalar() const;

    bool tracked() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

    // Forgets tape membership; values are kept.
    TensorGrid detached() const;

private:
    friend class Tape;
    std::vector<int> shape_;
    std::vector<double> values_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

// Record of executed differentiable operations. Parents always precede their
// children, so one reverse sweep visits every node exactly once. A tape is
// single-writer; concurrent passes belong on disjoint tapes.
class Tape {
public:
    using Backprop =
        std::function<void(const std::vector<double>& self_grad,
                           const std::vector<std::vector<double>*>& parent_grads)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers t as a differentiable leaf of this tape.
    void track(TensorGrid& t);

    // Reverse pass from a scalar loss. Throws if the loss is detached from this
    // tape, not a scalar, or backward already ran (reset() starts over).
    void backward(const TensorGrid& loss);

    // Accumulated gradient of a tracked leaf; valid after backward().
    // Zeros when the loss did not reach the leaf.
    TensorGrid grad(const TensorGrid& t) const;

    // Drops all recorded state so the tape can host a fresh pass.
    void reset();

    bool backward_done() const { return backward_done_; }
    int node_count() const { return static_cast<int>(nodes_.size()); }

    // Op plumbing: attaches `out` as a node computed from `parents`.
    void attach(TensorGrid& out, const std::vector<int>& parents, Backprop fn);

private:
    struct Node {
        int size = 0;
        std::vector<int> parents;
        Backprop backprop;           // empty for leaves
        std::vector<double> grad;    // allocated on demand during backward
        bool is_leaf = false;
    };
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// --- differentiable operations -------------------------------------------
//
// Each op computes eagerly and records itself on the (single, common) tape of
// its tracked inputs. With no tracked input the result is detached.

// 3x3 convolution, zero padding 1, stride 1. input [Cin,H,W],
// kernel [Cout,Cin,3,3], bias [Cout] -> [Cout,H,W].
TensorGrid conv2d(const TensorGrid& input, const TensorGrid& kernel, const TensorGrid& bias);

// Elementwise max(0, x); subgradient at 0 is 0.
TensorGrid relu(const TensorGrid& x);

// Elementwise logistic; outputs strictly inside (0, 1).
TensorGrid sigmoid(const TensorGrid& x);

// 2x2 max pooling, [C,H,W] -> [C,H/2,W/2], H and W even. Gradient routes to
// the argmax; ties resolve to the first element in row-major window order.
TensorGrid maxpool2(const TensorGrid& x);

// Nearest-neighbour x2 upsampling, [C,H,W] -> [C,2H,2W].
TensorGrid upsample2(const TensorGrid& x);

// Channel stacking, a first: [C1,H,W] + [C2,H,W] -> [C1+C2,H,W].
TensorGrid concat_channels(const TensorGrid& a, const TensorGrid& b);

// Elementwise sum / product of same-shape tensors.
TensorGrid add(const TensorGrid& a, const TensorGrid& b);
TensorGrid mul(const TensorGrid& a, const TensorGrid& b);

// Elementwise quotient of same-shape tensors.
TensorGrid div(const TensorGrid& a, const TensorGrid& b);

// Elementwise scale * x + shift.
TensorGrid affine(const TensorGrid& x, double scale, double shift);

// Full reduction to a single-element tensor.
TensorGrid sum(const TensorGrid& x);

} // namespace cellseg
