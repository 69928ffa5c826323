#pragma once

// Define-by-run reverse-mode differentiation over dense double arrays.
//
// A Tape records every operation applied to its Vars. Values live inside the
// tape (std::deque keeps references stable while recording), and backward()
// sweeps the nodes in reverse insertion order, which is a valid reverse
// topological order because parents are always recorded before children.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "chainmp/errors.hpp"

namespace chainmp::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw DimensionError("tensor shape " + shape_str(shape_) + " needs " +
                                 std::to_string(shape_numel(shape_)) + " values, got " +
                                 std::to_string(data_.size()));
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v) {
        const auto n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor(Shape{rows, cols}, std::move(v));
    }
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::vector<double> v;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& r : rows) {
            if (r.size() != cols) throw DimensionError("ragged matrix literal");
            v.insert(v.end(), r.begin(), r.end());
        }
        return Tensor(Shape{rows.size(), cols}, std::move(v));
    }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
    std::size_t cols() const { return shape_.size() < 2 ? 1 : size() / rows(); }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    double item() const {
        if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != size()) {
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    std::size_t id() const { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// Accumulates the local vector-Jacobian product into the parents' slots.
    using Backward = std::function<void(const Tensor& grad_out, std::vector<Tensor>& grads)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input.
    Var leaf(Tensor value) { return push(std::move(value), {}, nullptr, true, true); }

    /// Non-differentiable input.
    Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false, false); }

    Var record(Tensor value, std::vector<std::size_t> parents, Backward backward) {
        bool needs = false;
        for (auto p : parents) needs = needs || nodes_.at(p).requires_grad;
        return push(std::move(value), std::move(parents), needs ? std::move(backward) : Backward{}, needs,
                    false);
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }

    /// Gradients of a scalar root with respect to leaves of this tape. Leaves
    /// that do not influence the root get zero tensors.
    std::vector<Tensor> backward(const Var& root, std::span<const Var> wrt) const {
        if (&root.tape() != this) throw ContractError("backward: root belongs to a different tape");
        if (root.size() != 1) {
            throw ContractError("backward: root must be scalar, got shape " + shape_str(root.shape()));
        }
        for (const auto& w : wrt) {
            if (!w.valid() || &w.tape() != this) throw ContractError("backward: wrt tensor is not on this tape");
            const auto& n = nodes_.at(w.id());
            if (!n.is_leaf) throw ContractError("backward: wrt tensor is not a tape leaf");
        }
        std::vector<Tensor> grads(nodes_.size());
        grads[root.id()] = Tensor(root.shape(), 1.0);
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            const auto& node = nodes_[i];
            if (!node.backward || grads[i].size() == 0) continue;
            node.backward(grads[i], grads);
        }
        std::vector<Tensor> out;
        out.reserve(wrt.size());
        for (const auto& w : wrt) {
            auto& g = grads[w.id()];
            out.push_back(g.size() ? g : Tensor(w.shape()));
        }
        return out;
    }

    std::vector<Tensor> backward(const Var& root, std::initializer_list<Var> wrt) const {
        return backward(root, std::span<const Var>(wrt.begin(), wrt.size()));
    }

    /// Adds `g` into slot `id` when that node participates in differentiation.
    void accumulate(std::vector<Tensor>& grads, std::size_t id, const Tensor& g) const {
        if (!nodes_[id].requires_grad) return;
        auto& slot = grads[id];
        if (slot.size() == 0) {
            slot = g.reshaped(nodes_[id].value.shape());
            return;
        }
        auto dst = slot.data();
        auto src = g.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> parents;
        Backward backward;
        bool requires_grad = false;
        bool is_leaf = false;
    };

    Var push(Tensor value, std::vector<std::size_t> parents, Backward backward, bool requires_grad,
             bool is_leaf) {
        nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), requires_grad, is_leaf});
        return Var(this, nodes_.size() - 1);
    }

    std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

inline void same_shape(const char* op, const Var& a, const Var& b) {
    same_tape(a, b);
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

inline void require_matrix(const char* op, const Var& a) {
    if (a.shape().size() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
    }
}

template <class F>
Tensor map(const Tensor& x, F f) {
    Tensor out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

/// Elementwise unary op with derivative d(x, y) where y = f(x).
template <class F, class D>
Var unary(const Var& x, F f, D d) {
    Tape& tape = x.tape();
    Tensor y = map(x.value(), f);
    const std::size_t xi = x.id();
    const std::size_t yi = tape.size();
    return tape.record(std::move(y), {xi}, [&tape, xi, yi, d](const Tensor& g, std::vector<Tensor>& grads) {
        const auto xs = tape.value(xi).data();
        const auto ys = tape.value(yi).data();
        Tensor gx(g.shape());
        auto gs = g.data();
        auto out = gx.data();
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = gs[k] * d(xs[k], ys[k]);
        tape.accumulate(grads, xi, gx);
    });
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap as_matrix(const Tensor& t) {
    return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline MutMap as_matrix(Tensor& t) {
    return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    detail::same_shape("add", a, b);
    Tape& tape = a.tape();
    Tensor y(a.shape());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = a.value()[k] + b.value()[k];
    const auto ai = a.id(), bi = b.id();
    return tape.record(std::move(y), {ai, bi}, [&tape, ai, bi](const Tensor& g, std::vector<Tensor>& grads) {
        tape.accumulate(grads, ai, g);
        tape.accumulate(grads, bi, g);
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::same_shape("sub", a, b);
    Tape& tape = a.tape();
    Tensor y(a.shape());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = a.value()[k] - b.value()[k];
    const auto ai = a.id(), bi = b.id();
    return tape.record(std::move(y), {ai, bi}, [&tape, ai, bi](const Tensor& g, std::vector<Tensor>& grads) {
        tape.accumulate(grads, ai, g);
        tape.accumulate(grads, bi, detail::map(g, [](double v) { return -v; }));
    });
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
    detail::same_shape("mul", a, b);
    Tape& tape = a.tape();
    Tensor y(a.shape());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = a.value()[k] * b.value()[k];
    const auto ai = a.id(), bi = b.id();
    return tape.record(std::move(y), {ai, bi}, [&tape, ai, bi](const Tensor& g, std::vector<Tensor>& grads) {
        const auto& av = tape.value(ai);
        const auto& bv = tape.value(bi);
        if (tape.requires_grad(ai)) {
            Tensor ga(g.shape());
            for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = g[k] * bv[k];
            tape.accumulate(grads, ai, ga);
        }
        if (tape.requires_grad(bi)) {
            Tensor gb(g.shape());
            for (std::size_t k = 0; k < gb.size(); ++k) gb[k] = g[k] * av[k];
            tape.accumulate(grads, bi, gb);
        }
    });
}

inline Var scale(const Var& x, double c) {
    return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }

/// [M x K] times [K x N].
inline Var matmul(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    detail::require_matrix("matmul", a);
    detail::require_matrix("matmul", b);
    if (a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Tape& tape = a.tape();
    Tensor y(Shape{a.shape()[0], b.shape()[1]});
    detail::as_matrix(y).noalias() = detail::as_matrix(a.value()) * detail::as_matrix(b.value());
    const auto ai = a.id(), bi = b.id();
    return tape.record(std::move(y), {ai, bi}, [&tape, ai, bi](const Tensor& g, std::vector<Tensor>& grads) {
        const auto& av = tape.value(ai);
        const auto& bv = tape.value(bi);
        if (tape.requires_grad(ai)) {
            Tensor ga(av.shape());
            detail::as_matrix(ga).noalias() = detail::as_matrix(g) * detail::as_matrix(bv).transpose();
            tape.accumulate(grads, ai, ga);
        }
        if (tape.requires_grad(bi)) {
            Tensor gb(bv.shape());
            detail::as_matrix(gb).noalias() = detail::as_matrix(av).transpose() * detail::as_matrix(g);
            tape.accumulate(grads, bi, gb);
        }
    });
}

/// Adds a length-N bias to every row of an [M x N] matrix.
inline Var add_bias(const Var& x, const Var& bias) {
    detail::same_tape(x, bias);
    detail::require_matrix("add_bias", x);
    if (bias.size() != x.shape()[1]) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " +
                             shape_str(x.shape()));
    }
    Tape& tape = x.tape();
    Tensor y = x.value();
    const std::size_t rows = y.rows(), cols = y.cols();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bias.value()[c];
    const auto xi = x.id(), bi = bias.id();
    return tape.record(std::move(y), {xi, bi},
                       [&tape, xi, bi, rows, cols](const Tensor& g, std::vector<Tensor>& grads) {
                           tape.accumulate(grads, xi, g);
                           if (tape.requires_grad(bi)) {
                               Tensor gb(tape.value(bi).shape());
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                               tape.accumulate(grads, bi, gb);
                           }
                       });
}

inline Var sum(const Var& x) {
    Tape& tape = x.tape();
    const auto& v = x.value().values();
    double s = 0.0;
    for (double e : v) s += e;
    const auto xi = x.id();
    return tape.record(Tensor::scalar(s), {xi}, [&tape, xi](const Tensor& g, std::vector<Tensor>& grads) {
        tape.accumulate(grads, xi, Tensor(tape.value(xi).shape(), g.item()));
    });
}

inline Var mean(const Var& x) {
    if (x.size() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

inline Var square(const Var& x) {
    return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(const Var& x) {
    return detail::unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

inline Var tanh(const Var& x) {
    return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var silu(const Var& x) {
    return detail::unary(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

/// Identity forward; blocks all gradient flow to x.
inline Var stop_gradient(const Var& x) { return x.tape().constant(x.value()); }

/// Euclidean norm of all entries. The gradient at the origin is taken as zero.
inline Var l2norm(const Var& x) {
    Tape& tape = x.tape();
    double s = 0.0;
    for (double e : x.value().values()) s += e * e;
    const double n = std::sqrt(s);
    const auto xi = x.id();
    return tape.record(Tensor::scalar(n), {xi}, [&tape, xi, n](const Tensor& g, std::vector<Tensor>& grads) {
        const auto& xv = tape.value(xi);
        Tensor gx(xv.shape());
        if (n > 0.0)
            for (std::size_t k = 0; k < gx.size(); ++k) gx[k] = g.item() * xv[k] / n;
        tape.accumulate(grads, xi, gx);
    });
}

inline Var reshape(const Var& x, Shape shape) {
    Tape& tape = x.tape();
    Tensor y = x.value().reshaped(std::move(shape));
    const auto xi = x.id();
    return tape.record(std::move(y), {xi}, [&tape, xi](const Tensor& g, std::vector<Tensor>& grads) {
        tape.accumulate(grads, xi, g);
    });
}

/// Gathers rows of a matrix (indices may repeat).
inline Var select_rows(const Var& x, std::vector<std::size_t> indices) {
    detail::require_matrix("select_rows", x);
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    Tensor y(Shape{indices.size(), cols});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= rows) {
            throw DimensionError("select_rows: row " + std::to_string(indices[r]) + " out of range for " +
                                 shape_str(x.shape()));
        }
        std::copy_n(x.value().data().begin() + static_cast<std::ptrdiff_t>(indices[r] * cols), cols,
                    y.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
    }
    Tape& tape = x.tape();
    const auto xi = x.id();
    return tape.record(std::move(y), {xi},
                       [&tape, xi, cols, idx = std::move(indices)](const Tensor& g, std::vector<Tensor>& grads) {
                           Tensor gx(tape.value(xi).shape());
                           for (std::size_t r = 0; r < idx.size(); ++r)
                               for (std::size_t c = 0; c < cols; ++c) gx[idx[r] * cols + c] += g[r * cols + c];
                           tape.accumulate(grads, xi, gx);
                       });
}

/// Joins [M x N1] and [M x N2] into [M x (N1 + N2)].
inline Var concat_cols(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    detail::require_matrix("concat", a);
    detail::require_matrix("concat", b);
    if (a.shape()[0] != b.shape()[0]) {
        throw DimensionError("concat: row counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
    Tensor y(Shape{rows, ca + cb});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ca; ++c) y[r * (ca + cb) + c] = a.value()[r * ca + c];
        for (std::size_t c = 0; c < cb; ++c) y[r * (ca + cb) + ca + c] = b.value()[r * cb + c];
    }
    Tape& tape = a.tape();
    const auto ai = a.id(), bi = b.id();
    return tape.record(std::move(y), {ai, bi},
                       [&tape, ai, bi, rows, ca, cb](const Tensor& g, std::vector<Tensor>& grads) {
                           if (tape.requires_grad(ai)) {
                               Tensor ga(Shape{rows, ca});
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] = g[r * (ca + cb) + c];
                               tape.accumulate(grads, ai, ga);
                           }
                           if (tape.requires_grad(bi)) {
                               Tensor gb(Shape{rows, cb});
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] = g[r * (ca + cb) + ca + c];
                               tape.accumulate(grads, bi, gb);
                           }
                       });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }

}  // namespace chainmp::ad

namespace chainmp {
using ad::Tensor;
}  // namespace chainmp
