// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op result remembers its inputs and a local gradient rule when at
// least one input requires a gradient; the graph is therefore implicit in
// the node pointers and is recovered by a topological walk in backward().
// Storage is shared between a tensor and its detached views, which lets a
// frozen model hand out gradient-free views of its parameters to
// concurrent requests without copying.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "veracity/error.hpp"

namespace veracity {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? ", " : "") << s[i];
    out << ']';
    return out.str();
}

template <typename T>
class BasicTensor;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    std::vector<T> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads grad, accumulates into parents

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data->size(), T(0));
        return grad;
    }
};

}  // namespace detail

template <typename T>
class BasicTensor {
   public:
    using value_type = T;
    using Node = detail::Node<T>;

    BasicTensor() : BasicTensor(Shape{0}, std::vector<T>{}) {}

    BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        if (numel(shape) != values.size())
            throw ShapeError("tensor of shape " + veracity::to_string(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " + std::to_string(values.size()));
        node_->shape = std::move(shape);
        node_->data = std::make_shared<std::vector<T>>(std::move(values));
        node_->requires_grad = requires_grad;
    }

    static BasicTensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = numel(shape);
        return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
        const std::size_t n = numel(shape);
        return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static BasicTensor scalar(T value, bool requires_grad = false) {
        return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->data->size(); }
    const char* op() const { return node_->op; }

    std::span<const T> data() const { return *node_->data; }
    /// Writable view of the shared storage; visible through every detached view.
    std::span<T> mutable_data() { return *node_->data; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + veracity::to_string(shape()));
        return (*node_->data)[0];
    }

    T at(std::size_t i) const { return node_->data->at(i); }
    T at(std::size_t r, std::size_t c) const { return node_->data->at(r * node_->shape.back() + c); }

    bool requires_grad() const { return node_->requires_grad; }

    /// Marks this tensor as a gradient sink. On an op result whose inputs
    /// track nothing, this turns it into a leaf: the hook point for
    /// capturing gradients of an intermediate activation.
    BasicTensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient values, or zeros when no gradient has been accumulated.
    std::vector<T> grad() const { return has_grad() ? node_->grad : std::vector<T>(size(), T(0)); }
    void zero_grad() { node_->grad.clear(); }

    /// New leaf sharing this tensor's storage but carrying no history.
    BasicTensor detached() const {
        BasicTensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    /// Deep copy into an independent leaf.
    BasicTensor clone() const { return BasicTensor(shape(), *node_->data, requires_grad()); }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> v(node_->data->begin(), node_->data->end());
        return BasicTensor<U>(shape(), std::move(v), requires_grad());
    }

    bool same_node(const BasicTensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

    /// Wraps a freshly computed op result. History is kept only when some
    /// input tracks gradients.
    static BasicTensor from_op(const char* op, Shape shape, std::vector<T> values,
                               std::initializer_list<BasicTensor> inputs, std::function<void(Node&)> rule) {
        return from_op(op, std::move(shape), std::move(values), std::vector<BasicTensor>(inputs), std::move(rule));
    }

    static BasicTensor from_op(const char* op, Shape shape, std::vector<T> values,
                               const std::vector<BasicTensor>& inputs, std::function<void(Node&)> rule) {
        BasicTensor out(std::move(shape), std::move(values));
        out.node_->op = op;
        const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
        if (tracked) {
            out.node_->requires_grad = true;
            for (const auto& t : inputs) out.node_->parents.push_back(t.node_);
            out.node_->backward = std::move(rule);
        }
        return out;
    }

   private:
    std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Topologically ordered (inputs first) list of the gradient-tracking nodes
/// reachable from root. Each node appears exactly once.
template <typename T>
std::vector<detail::Node<T>*> topological_order(const BasicTensor<T>& root) {
    using Node = detail::Node<T>;
    std::vector<Node*> order;
    if (!root.requires_grad()) return order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

/// Populates d(root)/d(t) on every gradient-tracking tensor reachable from
/// root. Leaf gradients accumulate across calls; intermediate gradients are
/// recomputed each call.
template <typename T>
void backward(const BasicTensor<T>& root) {
    if (root.size() != 1)
        throw ShapeError("backward() needs a scalar root, got shape " + to_string(root.shape()));
    if (!root.requires_grad()) return;
    auto order = topological_order(root);
    for (auto* n : order) {
        if (n->backward) n->grad.assign(n->data->size(), T(0));
    }
    root.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

namespace detail {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename T>
void require_rank(const BasicTensor<T>& a, std::size_t rank, const char* op) {
    if (a.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         to_string(a.shape()));
}

// Splits a shape around axis into (outer, axis length, inner) extents.
inline std::tuple<std::size_t, std::size_t, std::size_t> around(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[axis], inner};
}

// C += A(m x k) * B(k x n), with optional transposes expressed by strides.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool ta, bool tb) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ta ? a[p * m + i] : a[i * k + p];
            if (av == T(0)) continue;
            if (!tb) {
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
            }
        }
    }
}

}  // namespace detail

/// (m x k) * (k x n).
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
    std::vector<T> out(m * n, T(0));
    detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n, false, false);
    return BasicTensor<T>::from_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)  // dA = dC * B^T
            detail::gemm_acc(self.grad.data(), pb.data->data(), pa.grad_buffer().data(), m, n, k, false, true);
        if (pb.requires_grad)  // dB = A^T * dC
            detail::gemm_acc(pa.data->data(), self.grad.data(), pb.grad_buffer().data(), k, m, n, true, false);
    });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    detail::require_rank(a, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<T> out(r * c);
    auto x = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return BasicTensor<T>::from_op("transpose", {c, r}, std::move(out), {a}, [r, c](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

/// Elementwise sum. b may also match the trailing dimensions of a, in which
/// case it is broadcast over the leading ones (bias rows, mask rows).
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool trailing = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
    if (!trailing)
        throw ShapeError("add: shape mismatch " + to_string(sa) + " vs " + to_string(sb));
    const std::size_t nb = b.size();
    std::vector<T> out(a.data().begin(), a.data().end());
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i % nb];
    return BasicTensor<T>::from_op("add", sa, std::move(out), {a, b}, [nb](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i];
        }
    });
}

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return add(a, b);
}

/// Elementwise product of equal shapes.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return BasicTensor<T>::from_op("mul", a.shape(), std::move(out), {a, b}, [](auto& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*pb.data)[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*pa.data)[i];
        }
    });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    return BasicTensor<T>::from_op("scale", a.shape(), std::move(out), {a}, [factor](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v += offset;
    return BasicTensor<T>::from_op("add_scalar", a.shape(), std::move(out), {a}, [](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return BasicTensor<T>::from_op("reshape", std::move(shape), std::move(out), {a}, [](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

/// Joins tensors that agree on every dimension except axis.
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != first[d])
                throw ShapeError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s));
        }
        shape[axis] += s[axis];
    }
    const auto [outer, total, inner] = detail::around(shape, axis);
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
    std::vector<T> out(numel(shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                        out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset));
        offset += widths[k];
    }
    const std::size_t row = total * inner;
    return BasicTensor<T>::from_op("concat", std::move(shape), std::move(out), parts,
                                   [widths, outer = outer, row](auto& self) {
                                       std::size_t off = 0;
                                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                           auto& p = *self.parents[k];
                                           if (p.requires_grad) {
                                               auto& g = p.grad_buffer();
                                               for (std::size_t o = 0; o < outer; ++o)
                                                   for (std::size_t i = 0; i < widths[k]; ++i)
                                                       g[o * widths[k] + i] += self.grad[o * row + off + i];
                                           }
                                           off += widths[k];
                                       }
                                   });
}

/// The half-open range [start, start + length) along axis.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= a.rank() || start + length > a.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") on axis " + std::to_string(axis) + " exceeds shape " + to_string(a.shape()));
    const auto [outer, extent, inner] = detail::around(a.shape(), axis);
    Shape shape = a.shape();
    shape[axis] = length;
    const std::size_t width = length * inner;
    const std::size_t row = extent * inner;
    const std::size_t skip = start * inner;
    std::vector<T> out(outer * width);
    auto src = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * row + skip), width,
                    out.begin() + static_cast<std::ptrdiff_t>(o * width));
    return BasicTensor<T>::from_op("slice", std::move(shape), std::move(out), {a},
                                   [outer = outer, width, row, skip](auto& self) {
                                       auto& g = self.parents[0]->grad_buffer();
                                       for (std::size_t o = 0; o < outer; ++o)
                                           for (std::size_t i = 0; i < width; ++i)
                                               g[o * row + skip + i] += self.grad[o * width + i];
                                   });
}

/// Rows of table (vocab x dim) selected by ids.
template <typename T, typename Id>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const Id> ids) {
    detail::require_rank(table, 2, "embedding");
    const std::size_t rows = table.dim(0), dim = table.dim(1);
    std::vector<std::size_t> idx;
    idx.reserve(ids.size());
    for (Id id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= rows)
            throw ValidationError("embedding: id " + std::to_string(id) + " outside table of " +
                                  std::to_string(rows) + " rows");
        idx.push_back(static_cast<std::size_t>(id));
    }
    const std::size_t n = idx.size();
    std::vector<T> out(n * dim);
    auto src = table.data();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * dim), dim,
                    out.begin() + static_cast<std::ptrdiff_t>(i * dim));
    return BasicTensor<T>::from_op("embedding", {n, dim}, std::move(out), {table},
                                   [idx = std::move(idx), dim](auto& self) {
                                       auto& g = self.parents[0]->grad_buffer();
                                       for (std::size_t i = 0; i < idx.size(); ++i)
                                           for (std::size_t j = 0; j < dim; ++j)
                                               g[idx[i] * dim + j] += self.grad[i * dim + j];
                                   });
}

/// Softmax along the last axis, shifted by the row maximum.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& a) {
    if (a.rank() == 0 || a.shape().back() == 0) throw ShapeError("softmax_rows: empty rows");
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.size() / cols;
    std::vector<T> out(a.size());
    auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * cols;
        T* o = out.data() + r * cols;
        const T mx = *std::max_element(in, in + cols);
        T total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
    }
    return BasicTensor<T>::from_op("softmax_rows", a.shape(), std::move(out), {a}, [rows, cols](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& y = *self.data;
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = 0;
            for (std::size_t c = 0; c < cols; ++c) dot += self.grad[r * cols + c] * y[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
                g[r * cols + c] += y[r * cols + c] * (self.grad[r * cols + c] - dot);
        }
    });
}

/// Normalizes each row over the last axis, then applies gain and bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& a, const BasicTensor<T>& gain, const BasicTensor<T>& bias, T eps) {
    const std::size_t d = a.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm: shape mismatch " + to_string(a.shape()) + " vs gain " +
                         to_string(gain.shape()) + " / bias " + to_string(bias.shape()));
    const std::size_t rows = a.size() / d;
    std::vector<T> normed(a.size());
    std::vector<T> inv_std(rows);
    std::vector<T> out(a.size());
    auto x = a.data();
    auto gv = gain.data();
    auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<T>(d);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            normed[r * d + j] = (in[j] - mean) * inv_std[r];
            out[r * d + j] = normed[r * d + j] * gv[j] + bv[j];
        }
    }
    return BasicTensor<T>::from_op(
        "layer_norm", a.shape(), std::move(out), {a, gain, bias},
        [rows, d, normed = std::move(normed), inv_std = std::move(inv_std)](auto& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const auto& gv = *pg.data;
            const auto& dy = self.grad;
            if (pg.requires_grad) {
                auto& gg = pg.grad_buffer();
                for (std::size_t i = 0; i < dy.size(); ++i) gg[i % d] += dy[i] * normed[i];
            }
            if (pb.requires_grad) {
                auto& gb = pb.grad_buffer();
                for (std::size_t i = 0; i < dy.size(); ++i) gb[i % d] += dy[i];
            }
            if (px.requires_grad) {
                auto& gx = px.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dn = 0, mean_dn_n = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dn = dy[r * d + j] * gv[j];
                        mean_dn += dn;
                        mean_dn_n += dn * normed[r * d + j];
                    }
                    mean_dn /= static_cast<T>(d);
                    mean_dn_n /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dn = dy[r * d + j] * gv[j];
                        gx[r * d + j] += inv_std[r] * (dn - mean_dn - normed[r * d + j] * mean_dn_n);
                    }
                }
            }
        });
}

/// Inverted dropout. Outside training (or at rate 0) this returns a itself.
template <typename T, typename Rng>
BasicTensor<T> dropout(const BasicTensor<T>& a, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return a;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(a.size());
    for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
    std::vector<T> out(a.size());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
    return BasicTensor<T>::from_op("dropout", a.shape(), std::move(out), {a}, [mask = std::move(mask)](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

/// Mean over one axis, which is removed from the shape (a rank-1 input
/// yields shape [1]).
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a, std::size_t axis) {
    if (axis >= a.rank()) throw ShapeError("mean: axis out of range for " + to_string(a.shape()));
    const auto [outer, extent, inner] = detail::around(a.shape(), axis);
    if (extent == 0) throw ShapeError("mean: empty axis in " + to_string(a.shape()));
    Shape shape = a.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (shape.empty()) shape = {1};
    std::vector<T> out(outer * inner, T(0));
    auto x = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t e = 0; e < extent; ++e)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * extent + e) * inner + i];
    const T inv = T(1) / static_cast<T>(extent);
    for (auto& v : out) v *= inv;
    return BasicTensor<T>::from_op("mean", std::move(shape), std::move(out), {a},
                                   [outer = outer, extent = extent, inner = inner, inv](auto& self) {
                                       auto& g = self.parents[0]->grad_buffer();
                                       for (std::size_t o = 0; o < outer; ++o)
                                           for (std::size_t e = 0; e < extent; ++e)
                                               for (std::size_t i = 0; i < inner; ++i)
                                                   g[(o * extent + e) * inner + i] += self.grad[o * inner + i] * inv;
                                   });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    T total = 0;
    for (T v : a.data()) total += v;
    return BasicTensor<T>::from_op("sum", {1}, {total}, {a}, [](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
    std::vector<T> out(a.size());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x[i];
        if (v >= 0) {
            out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            out[i] = e / (T(1) + e);
        }
    }
    return BasicTensor<T>::from_op("sigmoid", a.shape(), std::move(out), {a}, [](auto& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& y = *self.data;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i] * (T(1) - y[i]);
    });
}

/// GELU, tanh approximation:
/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    std::vector<T> out(a.size());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
    }
    return BasicTensor<T>::from_op("gelu", a.shape(), std::move(out), {a}, [](auto& self) {
        auto& p = *self.parents[0];
        auto& g = p.grad_buffer();
        const auto& x = *p.data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = x[i];
            const T t = std::tanh(c * (v + k * v * v * v));
            const T dt = (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
            g[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
        }
    });
}

}  // namespace veracity
