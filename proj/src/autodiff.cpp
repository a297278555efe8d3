#include "levytd/autodiff.hpp"

#include "levytd/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace levytd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

MatMap mat(Tensor& t) { return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }
ConstMatMap mat(const Tensor& t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
ArrMap arr(Tensor& t) { return {t.data().data(), static_cast<Eigen::Index>(t.size())}; }
ConstArrMap arr(const Tensor& t) { return {t.data().data(), static_cast<Eigen::Index>(t.size())}; }

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

bool is_row_vector_of(const Tensor& b, std::size_t cols) {
    return (b.rank() == 1 && b.size() == cols) || (b.rank() == 2 && b.rows() == 1 && b.cols() == cols);
}

}  // namespace

const Tensor& Var::value() const {
    if (tape_ == nullptr) {
        throw ContractError("use of an unbound Var");
    }
    return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(*this); }

bool Gradients::has(Var v) const { return v.id() < present_.size() && present_[v.id()] != 0; }

const Tensor& Gradients::of(Var v) const {
    if (!has(v)) {
        throw ContractError("no gradient recorded for node " + std::to_string(v.id()));
    }
    return adjoints_[v.id()];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node node;
    node.op = Op::kLeaf;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Tape::check_same_tape(Var v) const {
    if (v.tape() != this) {
        throw ContractError("operands live on different tapes");
    }
}

namespace {

Tape& tape_of(Var a) {
    if (a.tape() == nullptr) {
        throw ContractError("use of an unbound Var");
    }
    return *a.tape();
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = tape_of(a);
    tape.check_same_tape(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || (bv.rank() != 1 && bv.rank() != 2) || av.cols() != bv.rows()) {
        shape_mismatch("matmul", av, bv);
    }
    Tensor out = Tensor::uninitialized(bv.rank() == 2 ? std::vector<std::size_t>{av.rows(), bv.cols()}
                                                      : std::vector<std::size_t>{av.rows()});
    mat(out).noalias() = mat(av) * mat(bv);
    Tape::Node node;
    node.op = Op::kMatmul;
    node.a = a.id();
    node.b = b.id();
    node.value = std::move(out);
    node.requires_grad = a.requires_grad() || b.requires_grad();
    return tape.record(std::move(node));
}

Var matmul_nt(Var a, Var b) {
    Tape& tape = tape_of(a);
    tape.check_same_tape(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
        shape_mismatch("matmul_nt", av, bv);
    }
    Tensor out({av.rows(), bv.rows()});
    mat(out).noalias() = mat(av) * mat(bv).transpose();
    Tape::Node node;
    node.op = Op::kMatmulNT;
    node.a = a.id();
    node.b = b.id();
    node.value = std::move(out);
    node.requires_grad = a.requires_grad() || b.requires_grad();
    return tape.record(std::move(node));
}

Var affine(Var weight, Var x, Var bias) {
    Tape& tape = tape_of(weight);
    tape.check_same_tape(x);
    tape.check_same_tape(bias);
    const Tensor& w = weight.value();
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (w.rank() != 2) {
        shape_mismatch("affine", w, xv);
    }
    const bool batched = xv.rank() == 2;
    const std::size_t in = batched ? xv.cols() : xv.size();
    if ((xv.rank() != 1 && !batched) || in != w.cols()) {
        shape_mismatch("affine", w, xv);
    }
    if (!is_row_vector_of(bv, w.rows())) {
        shape_mismatch("affine", w, bv);
    }
    const std::size_t rows = batched ? xv.rows() : 1;
    Tensor out = Tensor::uninitialized(batched ? std::vector<std::size_t>{rows, w.rows()}
                                                  : std::vector<std::size_t>{w.rows()});
    ConstMatMap xm(xv.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
    MatMap om(out.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(w.rows()));
    om.noalias() = xm * mat(w).transpose();
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), static_cast<Eigen::Index>(bv.size()));
    Tape::Node node;
    node.op = Op::kAffine;
    node.a = weight.id();
    node.b = x.id();
    node.c = bias.id();
    node.value = std::move(out);
    node.requires_grad = weight.requires_grad() || x.requires_grad() || bias.requires_grad();
    return tape.record(std::move(node));
}

Var add(Var a, Var b) {
    Tape& tape = tape_of(a);
    tape.check_same_tape(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tape::Node node;
    node.a = a.id();
    node.b = b.id();
    node.requires_grad = a.requires_grad() || b.requires_grad();
    if (av.shape() == bv.shape()) {
        node.op = Op::kAdd;
        node.value = av;
        arr(node.value) += arr(bv);
    } else if (av.rank() == 2 && is_row_vector_of(bv, av.cols())) {
        node.op = Op::kAddRowBroadcast;
        node.value = av;
        mat(node.value).rowwise() +=
            Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), static_cast<Eigen::Index>(bv.size()));
    } else {
        shape_mismatch("add", av, bv);
    }
    return tape.record(std::move(node));
}

Var sub(Var a, Var b) {
    Tape& tape = tape_of(a);
    tape.check_same_tape(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) {
        shape_mismatch("sub", av, bv);
    }
    Tape::Node node;
    node.op = Op::kSub;
    node.a = a.id();
    node.b = b.id();
    node.value = av;
    arr(node.value) -= arr(bv);
    node.requires_grad = a.requires_grad() || b.requires_grad();
    return tape.record(std::move(node));
}

Var mul(Var a, Var b) {
    Tape& tape = tape_of(a);
    tape.check_same_tape(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) {
        shape_mismatch("mul", av, bv);
    }
    Tape::Node node;
    node.op = Op::kMul;
    node.a = a.id();
    node.b = b.id();
    node.value = av;
    arr(node.value) *= arr(bv);
    node.requires_grad = a.requires_grad() || b.requires_grad();
    return tape.record(std::move(node));
}

Var scale(Var a, double factor) {
    Tape& tape = tape_of(a);
    Tape::Node node;
    node.op = Op::kScale;
    node.a = a.id();
    node.scalar = factor;
    node.value = a.value();
    arr(node.value) *= factor;
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var tanh(Var a) {
    Tape& tape = tape_of(a);
    Tape::Node node;
    node.op = Op::kTanh;
    node.a = a.id();
    node.value = Tensor::uninitialized(a.value().shape());
    // 1 − 2/(e^{2x} + 1) runs on Eigen's vectorised exp; scalar tanh does not vectorise for doubles.
    arr(node.value) = 1.0 - 2.0 / ((2.0 * arr(a.value())).exp() + 1.0);
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var tanh_backprop(Var g, Var y) {
    Tape& tape = tape_of(g);
    tape.check_same_tape(y);
    const Tensor& gv = g.value();
    const Tensor& yv = y.value();
    if (gv.shape() != yv.shape()) {
        shape_mismatch("tanh_backprop", gv, yv);
    }
    Tape::Node node;
    node.op = Op::kTanhBackprop;
    node.a = g.id();
    node.b = y.id();
    node.value = Tensor::uninitialized(gv.shape());
    arr(node.value) = arr(gv) * (1.0 - arr(yv).square());
    node.requires_grad = g.requires_grad() || y.requires_grad();
    return tape.record(std::move(node));
}

Var sum_squares(Var a) {
    Tape& tape = tape_of(a);
    Tape::Node node;
    node.op = Op::kSumSquares;
    node.a = a.id();
    node.value = Tensor::scalar(arr(a.value()).square().sum());
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var sum(Var a) {
    Tape& tape = tape_of(a);
    Tape::Node node;
    node.op = Op::kSum;
    node.a = a.id();
    node.value = Tensor::scalar(arr(a.value()).sum());
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var abs(Var a) {
    Tape& tape = tape_of(a);
    Tape::Node node;
    node.op = Op::kAbs;
    node.a = a.id();
    node.value = Tensor::uninitialized(a.value().shape());
    arr(node.value) = arr(a.value()).abs();
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var concat(Var a, Var b, std::size_t axis) {
    Tape& tape = tape_of(a);
    tape.check_same_tape(b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tape::Node node;
    node.a = a.id();
    node.b = b.id();
    node.requires_grad = a.requires_grad() || b.requires_grad();
    if (axis == 0) {
        if (av.rank() != bv.rank() || av.rank() == 0 || av.cols() != bv.cols()) {
            shape_mismatch("concat(axis=0)", av, bv);
        }
        node.op = Op::kConcatRows;
        std::vector<std::size_t> shape = av.shape();
        shape[0] = av.rows() + bv.rows();
        node.value = Tensor::uninitialized(shape);
        std::copy(av.data().begin(), av.data().end(), node.value.data().begin());
        std::copy(bv.data().begin(), bv.data().end(), node.value.data().begin() + static_cast<std::ptrdiff_t>(av.size()));
    } else if (axis == 1) {
        if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows()) {
            shape_mismatch("concat(axis=1)", av, bv);
        }
        node.op = Op::kConcatCols;
        node.value = Tensor::uninitialized({av.rows(), av.cols() + bv.cols()});
        auto out = mat(node.value);
        out.leftCols(static_cast<Eigen::Index>(av.cols())) = mat(av);
        out.rightCols(static_cast<Eigen::Index>(bv.cols())) = mat(bv);
    } else {
        throw DimensionError("concat: axis must be 0 or 1");
    }
    return tape.record(std::move(node));
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() == 0 || begin > end || end > av.rows()) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of bounds for shape " + av.shape_string());
    }
    std::vector<std::size_t> shape = av.shape();
    shape[0] = end - begin;
    const std::size_t stride = av.cols();
    Tape::Node node;
    node.op = Op::kSliceRows;
    node.a = a.id();
    node.begin = begin;
    node.end = end;
    node.value = Tensor(shape, std::vector<double>(av.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                   av.data().begin() + static_cast<std::ptrdiff_t>(end * stride)));
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() != 2 || begin > end || end > av.cols()) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of bounds for shape " + av.shape_string());
    }
    Tape::Node node;
    node.op = Op::kSliceCols;
    node.a = a.id();
    node.begin = begin;
    node.end = end;
    node.value = Tensor::uninitialized({av.rows(), end - begin});
    mat(node.value) = mat(av).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var repeat_rows(Var a, std::size_t rows) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (!(av.rank() == 1 || (av.rank() == 2 && av.rows() == 1))) {
        throw DimensionError("repeat_rows: expected a row vector, got " + av.shape_string());
    }
    const std::size_t n = av.size();
    Tape::Node node;
    node.op = Op::kRepeatRows;
    node.a = a.id();
    node.value = Tensor::uninitialized({rows, n});
    mat(node.value).rowwise() = Eigen::Map<const Eigen::RowVectorXd>(av.data().data(), static_cast<Eigen::Index>(n));
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var segment_sum(Var a, std::vector<std::size_t> offsets) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() == 0 || offsets.empty() || offsets.front() != 0 || offsets.back() != av.rows() ||
        !std::is_sorted(offsets.begin(), offsets.end())) {
        throw DimensionError("segment_sum: offsets do not partition the rows of " + av.shape_string());
    }
    const std::size_t segments = offsets.size() - 1;
    const std::size_t cols = av.cols();
    std::vector<std::size_t> shape = av.shape();
    shape[0] = segments;
    Tape::Node node;
    node.op = Op::kSegmentSum;
    node.a = a.id();
    node.value = Tensor(shape);
    for (std::size_t s = 0; s < segments; ++s) {
        for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                node.value[s * cols + c] += av[r * cols + c];
            }
        }
    }
    node.segments = std::move(offsets);
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Var row_sum(Var a) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() != 2) {
        throw DimensionError("row_sum: expected a matrix, got " + av.shape_string());
    }
    Tape::Node node;
    node.op = Op::kRowSum;
    node.a = a.id();
    node.value = Tensor::uninitialized({av.rows(), 1});
    mat(node.value) = mat(av).rowwise().sum();
    node.requires_grad = a.requires_grad();
    return tape.record(std::move(node));
}

Gradients Tape::backward(Var root) const {
    if (root.tape() != this) {
        throw ContractError("backward: root belongs to a different tape");
    }
    if (nodes_[root.id()].value.size() != 1) {
        throw ContractError("backward: root must be scalar, got shape " + nodes_[root.id()].value.shape_string());
    }
    std::vector<Tensor> adj(root.id() + 1);
    std::vector<char> touched(root.id() + 1, 0);
    auto grad = [&](std::size_t id) -> Tensor& {
        if (!touched[id]) {
            adj[id] = Tensor(nodes_[id].value.shape(), 0.0);
            touched[id] = 1;
        }
        return adj[id];
    };
    // First contribution assigns into an uninitialised buffer, later ones accumulate.
    auto fresh = [&](std::size_t id) {
        if (touched[id]) {
            return false;
        }
        adj[id] = Tensor::uninitialized(nodes_[id].value.shape());
        touched[id] = 1;
        return true;
    };
    auto put_arr = [&](std::size_t id, const auto& expr) {
        if (fresh(id)) {
            arr(adj[id]) = expr;
        } else {
            arr(adj[id]) += expr;
        }
    };
    auto put_mat = [&](std::size_t id, const auto& expr) {
        if (fresh(id)) {
            mat(adj[id]).noalias() = expr;
        } else {
            mat(adj[id]).noalias() += expr;
        }
    };
    grad(root.id())[0] = 1.0;

    for (std::size_t id = root.id() + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (!touched[id] || !node.requires_grad || node.op == Op::kLeaf) {
            continue;
        }
        const Tensor& g = adj[id];
        const bool need_a = nodes_[node.a].requires_grad;
        const bool need_b = nodes_[node.b].requires_grad;
        switch (node.op) {
            case Op::kLeaf:
                break;
            case Op::kMatmul: {
                const Tensor& av = nodes_[node.a].value;
                const Tensor& bv = nodes_[node.b].value;
                if (need_a) {
                    put_mat(node.a, mat(g) * mat(bv).transpose());
                }
                if (need_b) {
                    put_mat(node.b, mat(av).transpose() * mat(g));
                }
                break;
            }
            case Op::kMatmulNT: {
                const Tensor& av = nodes_[node.a].value;
                const Tensor& bv = nodes_[node.b].value;
                if (need_a) {
                    put_mat(node.a, mat(g) * mat(bv));
                }
                if (need_b) {
                    put_mat(node.b, mat(g).transpose() * mat(av));
                }
                break;
            }
            case Op::kAffine: {
                const Tensor& w = nodes_[node.a].value;
                const Tensor& xv = nodes_[node.b].value;
                const auto rows = static_cast<Eigen::Index>(xv.rank() == 2 ? xv.rows() : 1);
                const auto in = static_cast<Eigen::Index>(w.cols());
                const auto out = static_cast<Eigen::Index>(w.rows());
                ConstMatMap gm(g.data().data(), rows, out);
                if (need_a) {
                    ConstMatMap xm(xv.data().data(), rows, in);
                    put_mat(node.a, gm.transpose() * xm);
                }
                if (need_b) {
                    MatMap gx(grad(node.b).data().data(), rows, in);
                    gx.noalias() += gm * mat(w);
                }
                if (nodes_[node.c].requires_grad) {
                    Tensor& gb = grad(node.c);
                    Eigen::Map<Eigen::RowVectorXd>(gb.data().data(), out) += gm.colwise().sum();
                }
                break;
            }
            case Op::kAdd:
                if (need_a) {
                    put_arr(node.a, arr(g));
                }
                if (need_b) {
                    put_arr(node.b, arr(g));
                }
                break;
            case Op::kAddRowBroadcast:
                if (need_a) {
                    put_arr(node.a, arr(g));
                }
                if (need_b) {
                    Tensor& gb = grad(node.b);
                    Eigen::Map<Eigen::RowVectorXd>(gb.data().data(), static_cast<Eigen::Index>(gb.size())) +=
                        mat(g).colwise().sum();
                }
                break;
            case Op::kSub:
                if (need_a) {
                    put_arr(node.a, arr(g));
                }
                if (need_b) {
                    put_arr(node.b, -arr(g));
                }
                break;
            case Op::kMul:
                if (need_a) {
                    put_arr(node.a, arr(g) * arr(nodes_[node.b].value));
                }
                if (need_b) {
                    put_arr(node.b, arr(g) * arr(nodes_[node.a].value));
                }
                break;
            case Op::kScale:
                if (need_a) {
                    put_arr(node.a, node.scalar * arr(g));
                }
                break;
            case Op::kTanh:
                if (need_a) {
                    put_arr(node.a, arr(g) * (1.0 - arr(node.value).square()));
                }
                break;
            case Op::kTanhBackprop: {
                const Tensor& gv = nodes_[node.a].value;
                const Tensor& yv = nodes_[node.b].value;
                if (need_a) {
                    put_arr(node.a, arr(g) * (1.0 - arr(yv).square()));
                }
                if (need_b) {
                    put_arr(node.b, -2.0 * arr(g) * arr(gv) * arr(yv));
                }
                break;
            }
            case Op::kSumSquares:
                if (need_a) {
                    put_arr(node.a, (2.0 * g[0]) * arr(nodes_[node.a].value));
                }
                break;
            case Op::kSum:
                if (need_a) {
                    arr(grad(node.a)) += g[0];
                }
                break;
            case Op::kAbs:
                if (need_a) {
                    put_arr(node.a, arr(g) * arr(nodes_[node.a].value).sign());
                }
                break;
            case Op::kConcatRows: {
                const std::size_t split = nodes_[node.a].value.size();
                if (need_a) {
                    Tensor& ga = grad(node.a);
                    for (std::size_t i = 0; i < split; ++i) {
                        ga[i] += g[i];
                    }
                }
                if (need_b) {
                    Tensor& gb = grad(node.b);
                    for (std::size_t i = 0; i < gb.size(); ++i) {
                        gb[i] += g[split + i];
                    }
                }
                break;
            }
            case Op::kConcatCols: {
                const auto left = static_cast<Eigen::Index>(nodes_[node.a].value.cols());
                const auto right = static_cast<Eigen::Index>(nodes_[node.b].value.cols());
                if (need_a) {
                    mat(grad(node.a)) += mat(g).leftCols(left);
                }
                if (need_b) {
                    mat(grad(node.b)) += mat(g).rightCols(right);
                }
                break;
            }
            case Op::kSliceRows:
                if (need_a) {
                    Tensor& ga = grad(node.a);
                    const std::size_t offset = node.begin * nodes_[node.a].value.cols();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        ga[offset + i] += g[i];
                    }
                }
                break;
            case Op::kSliceCols:
                if (need_a) {
                    mat(grad(node.a))
                        .middleCols(static_cast<Eigen::Index>(node.begin), static_cast<Eigen::Index>(node.end - node.begin)) +=
                        mat(g);
                }
                break;
            case Op::kRepeatRows:
                if (need_a) {
                    Tensor& ga = grad(node.a);
                    Eigen::Map<Eigen::RowVectorXd>(ga.data().data(), static_cast<Eigen::Index>(ga.size())) +=
                        mat(g).colwise().sum();
                }
                break;
            case Op::kSegmentSum:
                if (need_a) {
                    Tensor& ga = grad(node.a);
                    const std::size_t cols = ga.cols();
                    for (std::size_t s = 0; s + 1 < node.segments.size(); ++s) {
                        for (std::size_t r = node.segments[s]; r < node.segments[s + 1]; ++r) {
                            for (std::size_t c = 0; c < cols; ++c) {
                                ga[r * cols + c] += g[s * cols + c];
                            }
                        }
                    }
                }
                break;
            case Op::kRowSum:
                if (need_a) {
                    mat(grad(node.a)).colwise() += mat(g).col(0);
                }
                break;
        }
    }

    Gradients out;
    out.adjoints_.resize(adj.size());
    out.present_.assign(adj.size(), 0);
    for (std::size_t id = 0; id < adj.size(); ++id) {
        const Node& node = nodes_[id];
        if (node.op == Op::kLeaf && node.requires_grad) {
            out.adjoints_[id] = touched[id] ? std::move(adj[id]) : Tensor(node.value.shape(), 0.0);
            out.present_[id] = 1;
        }
    }
    return out;
}

}  // namespace levytd
