#pragma once

#include "levytd/tensor.hpp"

#include <cstddef>
#include <vector>

namespace levytd {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Adjoints ∂root/∂leaf for every leaf that requires gradients.
class Gradients {
public:
    bool has(Var v) const;
    const Tensor& of(Var v) const;

private:
    friend class Tape;
    std::vector<Tensor> adjoints_;
    std::vector<char> present_;
};

enum class Op {
    kLeaf,
    kMatmul,
    kMatmulNT,
    kAffine,
    kAdd,
    kAddRowBroadcast,
    kSub,
    kMul,
    kScale,
    kTanh,
    kTanhBackprop,
    kSumSquares,
    kSum,
    kAbs,
    kConcatRows,
    kConcatCols,
    kSliceRows,
    kSliceCols,
    kRepeatRows,
    kSegmentSum,
    kRowSum,
};

/// Records primitive operations in topological order and runs reverse accumulation.
///
/// Single-threaded; use one tape per thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor& value(Var v) const { return nodes_[v.id()].value; }
    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

    /// Reverse pass from a scalar (size-1) root. Adjoints start from zero on every call.
    Gradients backward(Var root) const;

    void clear() { nodes_.clear(); }

private:
    struct Node {
        Op op = Op::kLeaf;
        std::size_t a = 0;
        std::size_t b = 0;
        std::size_t c = 0;
        Tensor value;
        bool requires_grad = false;
        double scalar = 0.0;
        std::size_t begin = 0;
        std::size_t end = 0;
        std::vector<std::size_t> segments;
    };

    Var record(Node node);
    void check_same_tape(Var v) const;

    friend Var matmul(Var, Var);
    friend Var matmul_nt(Var, Var);
    friend Var affine(Var, Var, Var);
    friend Var add(Var, Var);
    friend Var sub(Var, Var);
    friend Var mul(Var, Var);
    friend Var scale(Var, double);
    friend Var tanh(Var);
    friend Var tanh_backprop(Var, Var);
    friend Var sum_squares(Var);
    friend Var sum(Var);
    friend Var abs(Var);
    friend Var concat(Var, Var, std::size_t);
    friend Var slice_rows(Var, std::size_t, std::size_t);
    friend Var slice_cols(Var, std::size_t, std::size_t);
    friend Var repeat_rows(Var, std::size_t);
    friend Var segment_sum(Var, std::vector<std::size_t>);
    friend Var row_sum(Var);

    std::vector<Node> nodes_;
};

/// a·b for a: m×k and b: k×n (result m×n) or b: k (result m).
Var matmul(Var a, Var b);
/// a·bᵀ for a: m×k, b: n×k.
Var matmul_nt(Var a, Var b);
/// Batched affine map x·Wᵀ + b for x: rows×in, W: out×in, b: out. A rank-1 x gives W·x + b.
Var affine(Var weight, Var x, Var bias);
/// Elementwise sum. `b` may also be a length-cols vector added to every row of matrix `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise (Hadamard) product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var tanh(Var a);
/// g ⊙ (1 − y²): the tanh derivative expressed through its output y.
Var tanh_backprop(Var g, Var y);
Var sum_squares(Var a);
Var sum(Var a);
/// Elementwise |a| with subgradient 0 at 0.
Var abs(Var a);
/// Concatenate along axis 0 (rows) or axis 1 (columns).
Var concat(Var a, Var b, std::size_t axis);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Tiles a 1×n matrix (or length-n vector) into rows×n.
Var repeat_rows(Var a, std::size_t rows);
/// Row j of the result is the sum of rows [offsets[j], offsets[j+1]) of `a`.
Var segment_sum(Var a, std::vector<std::size_t> offsets);
/// rows×cols → rows×1.
Var row_sum(Var a);

}  // namespace levytd
