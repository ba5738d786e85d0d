#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sftnet/common.hpp"

namespace sft {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over dense row-major tensors.
//
// A Tensor<T> is a value-semantic handle to a shared Node. Ops build new
// nodes; when gradients are required the node keeps its parents and a
// backward closure that scatters this node's grad into the parents' grads.
// backward() runs the closures in reverse topological order, sequentially,
// so gradients are bitwise reproducible for identical records.
//
// Every op output is checked for NaN/Inf and aborts with a NumericError so
// a bad step fails loudly instead of training on garbage.
// ---------------------------------------------------------------------------

namespace detail {
inline thread_local bool grad_enabled = true;
}

// RAII guard disabling graph recording (used for inference and the
// finite-difference loops, where only values matter).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev; }
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    bool requires_grad = false;
    std::vector<T> grad;  // same length as value once touched
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward;
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <class T>
inline void check_finite(const char* op, const std::vector<T>& v) {
    for (const T& x : v) {
        if (!std::isfinite(double(x)))
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
}

template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape s) { return Tensor(std::move(s), {}, T(0)); }
    static Tensor full(Shape s, T v) { return Tensor(std::move(s), {}, v); }
    static Tensor scalar(T v) { return from_data(Shape{}, {v}); }

    static Tensor from_data(Shape s, std::vector<T> v, bool requires_grad = false) {
        if (numel(s) != int64_t(v.size()))
            throw DimensionError("tensor data length " + std::to_string(v.size()) +
                                 " does not match shape " + shape_str(s));
        check_finite("from_data", v);
        Tensor t(std::move(s), std::move(v), T(0));
        t.node_->requires_grad = requires_grad;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t rank() const { return int64_t(node_->shape.size()); }
    int64_t size() const { return int64_t(node_->value.size()); }

    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    T item() const {
        if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw ParameterError("gradient not populated");
        return node_->grad;
    }
    void zero_grad() {
        node_->grad.assign(node_->value.size(), T(0));
    }

    Tensor clone() const {
        Tensor t(Shape(shape()), std::vector<T>(values()), T(0));
        return t;
    }

    std::shared_ptr<Node<T>>& node() { return node_; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    Tensor(Shape s, std::vector<T> v, T fill) : node_(std::make_shared<Node<T>>()) {
        node_->shape = std::move(s);
        if (v.empty() && numel(node_->shape) > 0)
            node_->value.assign(size_t(numel(node_->shape)), fill);
        else
            node_->value = std::move(v);
    }

    std::shared_ptr<Node<T>> node_;

    template <class U>
    friend Tensor<U> make_op(const char* name, Shape shape, std::vector<U> value,
                             const std::vector<Tensor<U>>& parents,
                             std::function<void(Node<U>&)> backward);
};

// Builds an op output node. Records the graph edge only when gradients are
// both enabled and needed; otherwise the result is a detached leaf.
template <class T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                  const std::vector<Tensor<T>>& parents,
                  std::function<void(Node<T>&)> backward) {
    check_finite(name, value);
    Tensor<T> out(std::move(shape), std::move(value), T(0));
    out.node_->op = name;
    bool need = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p.requires_grad()) need = true;
    if (need) {
        out.node_->requires_grad = true;
        for (const auto& p : parents) out.node_->parents.push_back(p.node());
        out.node_->backward = std::move(backward);
    }
    return out;
}

// Reverse topological order over the recorded graph (iterative DFS with
// cycle detection; parents are visited in recorded order so the resulting
// execution order is a pure function of the record).
template <class T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_map<Node<T>*, int> state;  // 0 unseen, 1 on stack, 2 done
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root, 0});
    state[root] = 1;
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i++].get();
            if (!p->requires_grad) continue;
            int& st = state[p];
            if (st == 1) throw InternalError("cyclic computation record");
            if (st == 0) {
                st = 1;
                stack.push_back({p, 0});
            }
        } else {
            state[n] = 2;
            order.push_back(n);
            stack.pop_back();
        }
    }
    return order;  // parents before children; reverse for backprop
}

// Populates grads of every requires_grad tensor reachable from `loss`.
// Leaf gradients accumulate (callers zero_grad between steps); interior
// gradients are reset here so a record can be replayed safely.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
        throw DimensionError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    Node<T>* root = loss.node().get();
    if (!root->requires_grad) return;
    auto order = topo_order(root);
    for (Node<T>* n : order) {
        if (n->backward) n->grad.assign(n->value.size(), T(0));  // interior node
        else n->ensure_grad();                                   // leaf: accumulate
    }
    root->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy trailing-dim alignment).
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    Shape out(std::max(a.size(), b.size()));
    for (size_t i = 0; i < out.size(); ++i) {
        int64_t ea = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
        int64_t eb = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw DimensionError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Element strides of `in` viewed through the broadcast `out` shape
// (stride 0 on broadcast axes).
inline std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    int64_t stride = 1;
    for (int64_t i = int64_t(in.size()) - 1; i >= 0; --i) {
        size_t oi = out.size() - (in.size() - size_t(i));
        if (in[size_t(i)] != 1) st[oi] = stride;
        stride *= in[size_t(i)];
    }
    return st;
}

// Odometer walk over `shape`, producing flat offsets for two broadcast
// operands. fn(ai, bi) is called once per output element in row-major order.
template <class Fn>
inline void for_each_bcast(const Shape& shape, const std::vector<int64_t>& sa,
                           const std::vector<int64_t>& sb, Fn&& fn) {
    const size_t r = shape.size();
    if (numel(shape) == 0) return;
    std::vector<int64_t> idx(r, 0);
    int64_t ai = 0, bi = 0;
    const int64_t n = numel(shape);
    for (int64_t c = 0;; ++c) {
        fn(ai, bi);
        if (c + 1 == n) break;
        for (int64_t d = int64_t(r) - 1; d >= 0; --d) {
            ai += sa[size_t(d)];
            bi += sb[size_t(d)];
            if (++idx[size_t(d)] < shape[size_t(d)]) break;
            ai -= sa[size_t(d)] * shape[size_t(d)];
            bi -= sb[size_t(d)] * shape[size_t(d)];
            idx[size_t(d)] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops.
// ---------------------------------------------------------------------------

// Generic broadcasting binary op. dfa/dfb map (gout, aval, bval) to the
// gradient contribution of each operand.
template <class T, class F, class DFa, class DFb>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DFa dfa, DFb dfb) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const int64_t n = numel(out_shape);
    std::vector<T> out(size_t(n));
    const auto& av = a.values();
    const auto& bv = b.values();
    if (a.shape() == b.shape()) {
        for (int64_t i = 0; i < n; ++i) out[size_t(i)] = f(av[size_t(i)], bv[size_t(i)]);
    } else {
        auto sa = bcast_strides(a.shape(), out_shape);
        auto sb = bcast_strides(b.shape(), out_shape);
        int64_t o = 0;
        for_each_bcast(out_shape, sa, sb,
                       [&](int64_t ai, int64_t bi) { out[size_t(o++)] = f(av[size_t(ai)], bv[size_t(bi)]); });
    }
    Shape a_shape = a.shape(), b_shape = b.shape();
    auto bw = [a_shape, b_shape, out_shape, dfa, dfb](Node<T>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const auto& g = node.grad;
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (a_shape == b_shape) {
            const int64_t n = int64_t(g.size());
            for (int64_t i = 0; i < n; ++i) {
                const T gi = g[size_t(i)];
                if (pa.requires_grad) pa.grad[size_t(i)] += dfa(gi, pa.value[size_t(i)], pb.value[size_t(i)]);
                if (pb.requires_grad) pb.grad[size_t(i)] += dfb(gi, pa.value[size_t(i)], pb.value[size_t(i)]);
            }
        } else {
            auto sa = bcast_strides(a_shape, out_shape);
            auto sb = bcast_strides(b_shape, out_shape);
            int64_t o = 0;
            for_each_bcast(out_shape, sa, sb, [&](int64_t ai, int64_t bi) {
                const T gi = g[size_t(o++)];
                if (pa.requires_grad) pa.grad[size_t(ai)] += dfa(gi, pa.value[size_t(ai)], pb.value[size_t(bi)]);
                if (pb.requires_grad) pb.grad[size_t(bi)] += dfb(gi, pa.value[size_t(ai)], pb.value[size_t(bi)]);
            });
        }
    };
    return make_op<T>(name, out_shape, std::move(out), {a, b}, bw);
}

template <class T, class F, class DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F f, DF df) {
    const int64_t n = x.size();
    std::vector<T> out(size_t(n));
    const auto& xv = x.values();
    for (int64_t i = 0; i < n; ++i) out[size_t(i)] = f(xv[size_t(i)]);
    auto bw = [df](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < node.grad.size(); ++i)
            p.grad[i] += df(node.grad[i], p.value[i], node.value[i]);
    };
    return make_op<T>(name, x.shape(), std::move(out), {x}, bw);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
        [](T g, T x, T y) { return -g * x / (y * y); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, double c) {
    const T cc = T(c);
    return unary_op<T>(
        "scale", x, [cc](T v) { return v * cc; }, [cc](T g, T, T) { return g * cc; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, double c) {
    const T cc = T(c);
    return unary_op<T>(
        "add_scalar", x, [cc](T v) { return v + cc; }, [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return scale(x, -1.0);
}

template <class T>
Tensor<T> abs_op(const Tensor<T>& x) {
    return unary_op<T>(
        "abs", x, [](T v) { return std::fabs(v); },
        [](T g, T v, T) { return v > T(0) ? g : (v < T(0) ? -g : T(0)); });
}

template <class T>
Tensor<T> log_op(const Tensor<T>& x) {
    return unary_op<T>(
        "log", x, [](T v) { return std::log(v); }, [](T g, T v, T) { return g / v; });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& x, double lo, double hi) {
    const T l = T(lo), h = T(hi);
    return unary_op<T>(
        "clamp", x, [l, h](T v) { return std::min(std::max(v, l), h); },
        [l, h](T g, T v, T) { return (v >= l && v <= h) ? g : T(0); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T g, T v, T) { return v > T(0) ? g : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op<T>(
        "sigmoid", x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T g, T, T s) { return g * s * (T(1) - s); });
}

// ---------------------------------------------------------------------------
// Shape ops (exact permutations / reinterpretations, trivially differentiable).
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                             " changes element count");
    auto bw = [](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i];
    };
    return make_op<T>("reshape", std::move(new_shape), std::vector<T>(x.values()), {x}, bw);
}

namespace detail {
template <class T>
void permute_copy(const Shape& in_shape, const std::vector<T>& in, const std::vector<int64_t>& axes,
                  std::vector<T>& out) {
    const size_t r = in_shape.size();
    std::vector<int64_t> in_strides(r, 1);
    for (int64_t i = int64_t(r) - 2; i >= 0; --i)
        in_strides[size_t(i)] = in_strides[size_t(i) + 1] * in_shape[size_t(i) + 1];
    Shape out_shape(r);
    std::vector<int64_t> src_stride(r);
    for (size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[size_t(axes[i])];
        src_stride[i] = in_strides[size_t(axes[i])];
    }
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    const int64_t n = numel(out_shape);
    out.resize(size_t(n));
    for (int64_t c = 0; c < n; ++c) {
        out[size_t(c)] = in[size_t(src)];
        for (int64_t d = int64_t(r) - 1; d >= 0; --d) {
            src += src_stride[size_t(d)];
            if (++idx[size_t(d)] < out_shape[size_t(d)]) break;
            src -= src_stride[size_t(d)] * out_shape[size_t(d)];
            idx[size_t(d)] = 0;
        }
    }
}
}  // namespace detail

template <class T>
Tensor<T> permute(const Tensor<T>& x, std::vector<int64_t> axes) {
    const size_t r = size_t(x.rank());
    if (axes.size() != r) throw DimensionError("permute axes rank mismatch");
    std::vector<bool> seen(r, false);
    for (int64_t a : axes) {
        if (a < 0 || size_t(a) >= r || seen[size_t(a)]) throw DimensionError("permute axes invalid");
        seen[size_t(a)] = true;
    }
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[size_t(axes[i])];
    std::vector<T> out;
    detail::permute_copy(x.shape(), x.values(), axes, out);

    std::vector<int64_t> inv(r);
    for (size_t i = 0; i < r; ++i) inv[size_t(axes[i])] = int64_t(i);
    Shape fwd_out = out_shape;
    auto bw = [inv, fwd_out](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        std::vector<T> gin;
        detail::permute_copy(fwd_out, node.grad, inv, gin);
        for (size_t i = 0; i < gin.size(); ++i) p.grad[i] += gin[i];
    };
    return make_op<T>("permute", std::move(out_shape), std::move(out), {x}, bw);
}

// Contiguous slice along one dimension.
template <class T>
Tensor<T> narrow(const Tensor<T>& x, int64_t dim, int64_t start, int64_t len) {
    const Shape& s = x.shape();
    if (dim < 0 || size_t(dim) >= s.size()) throw DimensionError("narrow: bad dim");
    if (start < 0 || len < 0 || start + len > s[size_t(dim)])
        throw DimensionError("narrow: range out of bounds for " + shape_str(s));
    Shape out_shape = s;
    out_shape[size_t(dim)] = len;
    int64_t inner = 1;
    for (size_t i = size_t(dim) + 1; i < s.size(); ++i) inner *= s[i];
    int64_t outer = 1;
    for (size_t i = 0; i < size_t(dim); ++i) outer *= s[i];
    const int64_t in_row = s[size_t(dim)] * inner;
    const int64_t out_row = len * inner;
    std::vector<T> out(size_t(outer * out_row));
    const auto& xv = x.values();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * out_row, xv.data() + o * in_row + start * inner,
                    size_t(out_row) * sizeof(T));
    auto bw = [outer, inner, in_row, out_row, start](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            T* dst = p.grad.data() + o * in_row + start * inner;
            const T* src = node.grad.data() + o * out_row;
            for (int64_t i = 0; i < out_row; ++i) dst[i] += src[i];
        }
    };
    return make_op<T>("narrow", std::move(out_shape), std::move(out), {x}, bw);
}

// Concatenation of two tensors along one dimension.
template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int64_t dim) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size()) throw DimensionError("concat rank mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
    if (dim < 0 || size_t(dim) >= sa.size()) throw DimensionError("concat: bad dim");
    for (size_t i = 0; i < sa.size(); ++i)
        if (i != size_t(dim) && sa[i] != sb[i])
            throw DimensionError("concat shape mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
    Shape out_shape = sa;
    out_shape[size_t(dim)] += sb[size_t(dim)];
    int64_t inner = 1;
    for (size_t i = size_t(dim) + 1; i < sa.size(); ++i) inner *= sa[i];
    int64_t outer = 1;
    for (size_t i = 0; i < size_t(dim); ++i) outer *= sa[i];
    const int64_t ra = sa[size_t(dim)] * inner, rb = sb[size_t(dim)] * inner;
    std::vector<T> out(size_t(outer * (ra + rb)));
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * (ra + rb), a.values().data() + o * ra, size_t(ra) * sizeof(T));
        std::memcpy(out.data() + o * (ra + rb) + ra, b.values().data() + o * rb, size_t(rb) * sizeof(T));
    }
    auto bw = [outer, ra, rb](Node<T>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            const T* g = node.grad.data() + o * (ra + rb);
            if (pa.requires_grad)
                for (int64_t i = 0; i < ra; ++i) pa.grad[size_t(o * ra + i)] += g[i];
            if (pb.requires_grad)
                for (int64_t i = 0; i < rb; ++i) pb.grad[size_t(o * rb + i)] += g[ra + i];
        }
    };
    return make_op<T>("concat", std::move(out_shape), std::move(out), {a, b}, bw);
}

// Cyclic shift over the two spatial dims of a (B, H, W, C) tensor.
// dy/dx follow roll semantics: out[b, i, j] = in[b, (i - dy) mod H, (j - dx) mod W].
template <class T>
Tensor<T> roll_hw(const Tensor<T>& x, int64_t dy, int64_t dx) {
    if (x.rank() != 4) throw DimensionError("roll_hw expects rank-4 (B,H,W,C), got " + shape_str(x.shape()));
    const int64_t B = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
    auto mod = [](int64_t a, int64_t m) { return ((a % m) + m) % m; };
    dy = mod(dy, H);
    dx = mod(dx, W);
    if (dy == 0 && dx == 0) {
        // no-op roll; still record an identity edge for uniform graphs
        auto bw = [](Node<T>& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i];
        };
        return make_op<T>("roll_hw", Shape(x.shape()), std::vector<T>(x.values()), {x}, bw);
    }
    std::vector<T> out(size_t(x.size()));
    const auto& xv = x.values();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < H; ++i) {
            const int64_t si = mod(i - dy, H);
            for (int64_t j = 0; j < W; ++j) {
                const int64_t sj = mod(j - dx, W);
                std::memcpy(out.data() + ((b * H + i) * W + j) * C,
                            xv.data() + ((b * H + si) * W + sj) * C, size_t(C) * sizeof(T));
            }
        }
    auto bw = [B, H, W, C, dy, dx, mod](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < H; ++i) {
                const int64_t si = mod(i - dy, H);
                for (int64_t j = 0; j < W; ++j) {
                    const int64_t sj = mod(j - dx, W);
                    const T* g = node.grad.data() + ((b * H + i) * W + j) * C;
                    T* dst = p.grad.data() + ((b * H + si) * W + sj) * C;
                    for (int64_t c = 0; c < C; ++c) dst[c] += g[c];
                }
            }
    };
    return make_op<T>("roll_hw", Shape(x.shape()), std::move(out), {x}, bw);
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (const T& v : x.values()) acc += v;
    auto bw = [](Node<T>& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const T g = node.grad[0];
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    };
    return make_op<T>("sum", Shape{}, std::vector<T>{acc}, {x}, bw);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
    if (x.size() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum_all(x), 1.0 / double(x.size()));
}

// Conversion between storage dtypes (detached from the graph).
template <class To, class From>
Tensor<To> convert(const Tensor<From>& x) {
    std::vector<To> v(x.values().begin(), x.values().end());
    return Tensor<To>::from_data(Shape(x.shape()), std::move(v));
}

}  // namespace sft
