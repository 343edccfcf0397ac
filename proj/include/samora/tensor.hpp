#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "samora/rng.hpp"

namespace samora {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + "]";
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument("samora: shape mismatch in " + op + ": " + shape_str(a) + " vs " + shape_str(b));
}

// Dynamically built reverse-mode graph over dense row-major tensors.
// One Node per op result; leaves hold parameters or constants. Backward
// closures capture parent handles only (never the owning node), so graphs
// free themselves once the loss tensor goes out of scope.
template <class T>
class TensorT {
public:
    struct Node {
        Shape shape;
        std::vector<T> val;
        std::vector<T> grad;
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backfn;

        std::size_t numel() const { return val.size(); }
        void ensure_grad() {
            if (grad.size() != val.size()) grad.assign(val.size(), T(0));
        }
    };
    using NodePtr = std::shared_ptr<Node>;

    TensorT() = default;
    explicit TensorT(NodePtr n) : n_(std::move(n)) {}

    static TensorT zeros(Shape shape) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->val.assign(shape_numel(n->shape), T(0));
        return TensorT(std::move(n));
    }

    static TensorT full(Shape shape, T v) {
        TensorT t = zeros(std::move(shape));
        std::fill(t.n_->val.begin(), t.n_->val.end(), v);
        return t;
    }

    static TensorT scalar(T v) { return full({1}, v); }

    static TensorT from_data(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("samora: from_data size mismatch for shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->val = std::move(data);
        return TensorT(std::move(n));
    }

    static TensorT randn(Shape shape, Rng& rng, T stddev = T(1)) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.n_->val) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
        return t;
    }

    static TensorT trunc_normal(Shape shape, Rng& rng, T stddev) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.n_->val) v = static_cast<T>(rng.trunc_normal(static_cast<double>(stddev)));
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    std::size_t numel() const { return n_->val.size(); }

    std::vector<T>& data() { return n_->val; }
    const std::vector<T>& data() const { return n_->val; }
    std::vector<T>& grad() { return n_->grad; }
    const std::vector<T>& grad() const { return n_->grad; }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("samora: item() on non-scalar " + shape_str(shape()));
        return n_->val[0];
    }

    TensorT& set_requires_grad(bool b = true) {
        n_->requires_grad = b;
        return *this;
    }
    bool requires_grad() const { return n_->requires_grad; }

    void zero_grad() { n_->grad.assign(n_->val.size(), T(0)); }

    // Leaf copy of the current values; cuts the graph.
    TensorT detach() const {
        auto n = std::make_shared<Node>();
        n->shape = n_->shape;
        n->val = n_->val;
        return TensorT(std::move(n));
    }

    bool all_finite() const {
        for (T v : n_->val)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    NodePtr node() const { return n_; }

    // Reverse-mode sweep from a scalar result.
    void backward() {
        if (numel() != 1) throw std::invalid_argument("samora: backward() needs a scalar loss");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                Node* p = node->parents[idx++].get();
                if (!seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        n_->ensure_grad();
        n_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* node = *it;
            if (node->backfn && !node->grad.empty()) node->backfn(*node);
        }
    }

private:
    NodePtr n_;
};

namespace detail {

template <class T>
using Node = typename TensorT<T>::Node;
template <class T>
using NodePtr = typename TensorT<T>::NodePtr;

template <class T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<EigenRowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const EigenRowMat<T>>;

template <class T>
TensorT<T> make_result(Shape shape, std::vector<NodePtr<T>> parents) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->val.assign(shape_numel(n->shape), T(0));
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    return TensorT<T>(std::move(n));
}

template <class T>
bool wants_grad(const Node<T>& n) {
    return n.requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic (same shape, or one operand scalar-shaped [1])

namespace detail {

enum class BinKind { Add, Sub, Mul, Div };

template <class T>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, BinKind kind, const char* name) {
    const bool bs = b.numel() == 1 && a.numel() != 1;
    const bool as = a.numel() == 1 && b.numel() != 1;
    if (!as && !bs && a.shape() != b.shape()) shape_error(name, a.shape(), b.shape());
    Shape out_shape = as ? b.shape() : a.shape();
    auto out = make_result<T>(out_shape, {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    const std::size_t n = ov.size();
    for (std::size_t i = 0; i < n; ++i) {
        const T x = as ? av[0] : av[i];
        const T y = bs ? bv[0] : bv[i];
        switch (kind) {
            case BinKind::Add: ov[i] = x + y; break;
            case BinKind::Sub: ov[i] = x - y; break;
            case BinKind::Mul: ov[i] = x * y; break;
            case BinKind::Div: ov[i] = x / y; break;
        }
    }
    if (out.requires_grad()) {
        auto pa = a.node();
        auto pb = b.node();
        out.node()->backfn = [pa, pb, kind, as, bs](Node<T>& self) {
            const std::size_t n = self.grad.size();
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T g = self.grad[i];
                    const T x = as ? pa->val[0] : pa->val[i];
                    const T y = bs ? pb->val[0] : pb->val[i];
                    (void)x;
                    T da;
                    switch (kind) {
                        case BinKind::Add: da = g; break;
                        case BinKind::Sub: da = g; break;
                        case BinKind::Mul: da = g * y; break;
                        case BinKind::Div: da = g / y; break;
                    }
                    pa->grad[as ? 0 : i] += da;
                }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T g = self.grad[i];
                    const T x = as ? pa->val[0] : pa->val[i];
                    const T y = bs ? pb->val[0] : pb->val[i];
                    T db;
                    switch (kind) {
                        case BinKind::Add: db = g; break;
                        case BinKind::Sub: db = -g; break;
                        case BinKind::Mul: db = g * x; break;
                        case BinKind::Div: db = -g * x / (y * y); break;
                    }
                    pb->grad[bs ? 0 : i] += db;
                }
            }
        };
    }
    return out;
}

}  // namespace detail

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(a, b, detail::BinKind::Add, "add");
}
template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(a, b, detail::BinKind::Sub, "sub");
}
template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(a, b, detail::BinKind::Mul, "mul");
}
template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(a, b, detail::BinKind::Div, "div");
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    auto out = detail::make_result<T>(a.shape(), {a.node()});
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * c;
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa, c](detail::Node<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
        };
    }
    return out;
}

template <class T>
TensorT<T> add_const(const TensorT<T>& a, T c) {
    auto out = detail::make_result<T>(a.shape(), {a.node()});
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + c;
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa](detail::Node<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        };
    }
    return out;
}

// Broadcast-add a vector [C] to every row of [R,C] (or [..,C]).
template <class T>
TensorT<T> add_rowvec(const TensorT<T>& a, const TensorT<T>& v) {
    const int C = a.dim(a.ndim() - 1);
    if (v.ndim() != 1 || v.dim(0) != C) shape_error("add_rowvec", a.shape(), v.shape());
    const std::size_t rows = a.numel() / static_cast<std::size_t>(C);
    auto out = detail::make_result<T>(a.shape(), {a.node(), v.node()});
    for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) out.data()[r * C + c] = a.data()[r * C + c] + v.data()[c];
    if (out.requires_grad()) {
        auto pa = a.node();
        auto pv = v.node();
        out.node()->backfn = [pa, pv, rows, C](detail::Node<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pv->requires_grad) {
                pv->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (int c = 0; c < C; ++c) pv->grad[c] += self.grad[r * C + c];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul / shape movement

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
    const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    auto out = detail::make_result<T>({M, N}, {a.node(), b.node()});
    detail::ConstMatMap<T> A(a.data().data(), M, K);
    detail::ConstMatMap<T> B(b.data().data(), K, N);
    detail::MatMap<T>(out.data().data(), M, N).noalias() = A * B;
    if (out.requires_grad()) {
        auto pa = a.node();
        auto pb = b.node();
        out.node()->backfn = [pa, pb, M, K, N](detail::Node<T>& self) {
            detail::ConstMatMap<T> G(self.grad.data(), M, N);
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::ConstMatMap<T> B(pb->val.data(), K, N);
                detail::MatMap<T>(pa->grad.data(), M, K).noalias() += G * B.transpose();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::ConstMatMap<T> A(pa->val.data(), M, K);
                detail::MatMap<T>(pb->grad.data(), K, N).noalias() += A.transpose() * G;
            }
        };
    }
    return out;
}

// Batched matmul over the shared leading dim: [G,M,K] x [G,K,N] -> [G,M,N].
template <class T>
TensorT<T> matmul3(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        shape_error("matmul3", a.shape(), b.shape());
    const int G = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    auto out = detail::make_result<T>({G, M, N}, {a.node(), b.node()});
    for (int g = 0; g < G; ++g) {
        detail::ConstMatMap<T> A(a.data().data() + static_cast<std::size_t>(g) * M * K, M, K);
        detail::ConstMatMap<T> B(b.data().data() + static_cast<std::size_t>(g) * K * N, K, N);
        detail::MatMap<T>(out.data().data() + static_cast<std::size_t>(g) * M * N, M, N).noalias() = A * B;
    }
    if (out.requires_grad()) {
        auto pa = a.node();
        auto pb = b.node();
        out.node()->backfn = [pa, pb, G, M, K, N](detail::Node<T>& self) {
            for (int g = 0; g < G; ++g) {
                detail::ConstMatMap<T> Gm(self.grad.data() + static_cast<std::size_t>(g) * M * N, M, N);
                if (pa->requires_grad) {
                    pa->ensure_grad();
                    detail::ConstMatMap<T> B(pb->val.data() + static_cast<std::size_t>(g) * K * N, K, N);
                    detail::MatMap<T>(pa->grad.data() + static_cast<std::size_t>(g) * M * K, M, K).noalias() +=
                        Gm * B.transpose();
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    detail::ConstMatMap<T> A(pa->val.data() + static_cast<std::size_t>(g) * M * K, M, K);
                    detail::MatMap<T>(pb->grad.data() + static_cast<std::size_t>(g) * K * N, K, N).noalias() +=
                        A.transpose() * Gm;
                }
            }
        };
    }
    return out;
}

template <class T>
TensorT<T> transpose2(const TensorT<T>& a) {
    if (a.ndim() != 2) shape_error("transpose2", a.shape(), a.shape());
    const int M = a.dim(0), N = a.dim(1);
    auto out = detail::make_result<T>({N, M}, {a.node()});
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) out.data()[static_cast<std::size_t>(j) * M + i] = a.data()[static_cast<std::size_t>(i) * N + j];
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa, M, N](detail::Node<T>& self) {
            pa->ensure_grad();
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < N; ++j)
                    pa->grad[static_cast<std::size_t>(i) * N + j] += self.grad[static_cast<std::size_t>(j) * M + i];
        };
    }
    return out;
}

template <class T>
TensorT<T> permute3(const TensorT<T>& a, std::array<int, 3> p) {
    if (a.ndim() != 3) shape_error("permute3", a.shape(), a.shape());
    const int d0 = a.dim(0), d1 = a.dim(1), d2 = a.dim(2);
    const int dims[3] = {d0, d1, d2};
    Shape out_shape = {dims[p[0]], dims[p[1]], dims[p[2]]};
    auto out = detail::make_result<T>(out_shape, {a.node()});
    const std::size_t s1 = static_cast<std::size_t>(d1) * d2, s2 = static_cast<std::size_t>(d2);
    const std::size_t o1 = static_cast<std::size_t>(out_shape[1]) * out_shape[2], o2 = static_cast<std::size_t>(out_shape[2]);
    int idx[3];
    for (idx[0] = 0; idx[0] < d0; ++idx[0])
        for (idx[1] = 0; idx[1] < d1; ++idx[1])
            for (idx[2] = 0; idx[2] < d2; ++idx[2]) {
                const std::size_t src = idx[0] * s1 + idx[1] * s2 + idx[2];
                const std::size_t dst = static_cast<std::size_t>(idx[p[0]]) * o1 + static_cast<std::size_t>(idx[p[1]]) * o2 +
                                        static_cast<std::size_t>(idx[p[2]]);
                out.data()[dst] = a.data()[src];
            }
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa, p, d0, d1, d2, s1, s2, o1, o2](detail::Node<T>& self) {
            pa->ensure_grad();
            int idx[3];
            for (idx[0] = 0; idx[0] < d0; ++idx[0])
                for (idx[1] = 0; idx[1] < d1; ++idx[1])
                    for (idx[2] = 0; idx[2] < d2; ++idx[2]) {
                        const std::size_t src = idx[0] * s1 + idx[1] * s2 + idx[2];
                        const std::size_t dst = static_cast<std::size_t>(idx[p[0]]) * o1 +
                                                static_cast<std::size_t>(idx[p[1]]) * o2 + static_cast<std::size_t>(idx[p[2]]);
                        pa->grad[src] += self.grad[dst];
                    }
        };
    }
    return out;
}

template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
    auto out = detail::make_result<T>(std::move(shape), {a.node()});
    out.data() = a.data();
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa](detail::Node<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        };
    }
    return out;
}

// Concatenation along the first axis; trailing dims must agree.
template <class T>
TensorT<T> concat0(const std::vector<TensorT<T>>& ts) {
    if (ts.empty()) throw std::invalid_argument("samora: concat0 of nothing");
    Shape tail(ts[0].shape().begin() + 1, ts[0].shape().end());
    int rows = 0;
    std::vector<detail::NodePtr<T>> parents;
    for (const auto& t : ts) {
        Shape tt(t.shape().begin() + 1, t.shape().end());
        if (tt != tail) shape_error("concat0", ts[0].shape(), t.shape());
        rows += t.dim(0);
        parents.push_back(t.node());
    }
    Shape out_shape = {rows};
    out_shape.insert(out_shape.end(), tail.begin(), tail.end());
    auto out = detail::make_result<T>(out_shape, parents);
    std::size_t off = 0;
    for (const auto& t : ts) {
        std::copy(t.data().begin(), t.data().end(), out.data().begin() + off);
        off += t.numel();
    }
    if (out.requires_grad()) {
        out.node()->backfn = [parents](detail::Node<T>& self) {
            std::size_t off = 0;
            for (const auto& p : parents) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < p->val.size(); ++i) p->grad[i] += self.grad[off + i];
                }
                off += p->val.size();
            }
        };
    }
    return out;
}

template <class T>
TensorT<T> slice0(const TensorT<T>& a, int start, int len) {
    if (start < 0 || len <= 0 || start + len > a.dim(0)) shape_error("slice0", a.shape(), {start, len});
    Shape out_shape = a.shape();
    out_shape[0] = len;
    const std::size_t stride = a.numel() / static_cast<std::size_t>(a.dim(0));
    auto out = detail::make_result<T>(out_shape, {a.node()});
    std::copy(a.data().begin() + start * stride, a.data().begin() + (start + len) * stride, out.data().begin());
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa, start, stride](detail::Node<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[start * stride + i] += self.grad[i];
        };
    }
    return out;
}

template <class T>
TensorT<T> gather_rows(const TensorT<T>& a, const std::vector<int>& idx) {
    if (a.ndim() != 2) shape_error("gather_rows", a.shape(), a.shape());
    const int C = a.dim(1);
    auto out = detail::make_result<T>({static_cast<int>(idx.size()), C}, {a.node()});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= a.dim(0)) throw std::out_of_range("samora: gather_rows index");
        std::copy(a.data().begin() + static_cast<std::size_t>(idx[r]) * C,
                  a.data().begin() + static_cast<std::size_t>(idx[r] + 1) * C,
                  out.data().begin() + r * static_cast<std::size_t>(C));
    }
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa, idx, C](detail::Node<T>& self) {
            pa->ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (int c = 0; c < C; ++c)
                    pa->grad[static_cast<std::size_t>(idx[r]) * C + c] += self.grad[r * static_cast<std::size_t>(C) + c];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
TensorT<T> sum_all(const TensorT<T>& a) {
    auto out = detail::make_result<T>({1}, {a.node()});
    T s = T(0);
    for (T v : a.data()) s += v;
    out.data()[0] = s;
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa](detail::Node<T>& self) {
            pa->ensure_grad();
            for (auto& g : pa->grad) g += self.grad[0];
        };
    }
    return out;
}

template <class T>
TensorT<T> mean_all(const TensorT<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// [R,C] -> [C], mean over rows.
template <class T>
TensorT<T> mean_axis0(const TensorT<T>& a) {
    if (a.ndim() != 2) shape_error("mean_axis0", a.shape(), a.shape());
    const int R = a.dim(0), C = a.dim(1);
    auto out = detail::make_result<T>({C}, {a.node()});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.data()[c] += a.data()[static_cast<std::size_t>(r) * C + c];
    for (int c = 0; c < C; ++c) out.data()[c] /= static_cast<T>(R);
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa, R, C](detail::Node<T>& self) {
            pa->ensure_grad();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) pa->grad[static_cast<std::size_t>(r) * C + c] += self.grad[c] / static_cast<T>(R);
        };
    }
    return out;
}

// [C,H,W] -> [C], mean over the spatial extent.
template <class T>
TensorT<T> spatial_mean(const TensorT<T>& a) {
    if (a.ndim() != 3) shape_error("spatial_mean", a.shape(), a.shape());
    const int C = a.dim(0);
    const std::size_t hw = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
    auto out = detail::make_result<T>({C}, {a.node()});
    for (int c = 0; c < C; ++c) {
        T s = T(0);
        for (std::size_t i = 0; i < hw; ++i) s += a.data()[c * hw + i];
        out.data()[c] = s / static_cast<T>(hw);
    }
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa, C, hw](detail::Node<T>& self) {
            pa->ensure_grad();
            for (int c = 0; c < C; ++c)
                for (std::size_t i = 0; i < hw; ++i) pa->grad[c * hw + i] += self.grad[c] / static_cast<T>(hw);
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// nonlinearities / normalizations

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    auto out = detail::make_result<T>(a.shape(), {a.node()});
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa](detail::Node<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (pa->val[i] > T(0)) pa->grad[i] += self.grad[i];
        };
    }
    return out;
}

// Exact erf form, so finite-difference checks agree to tight tolerance.
template <class T>
TensorT<T> gelu(const TensorT<T>& a) {
    auto out = detail::make_result<T>(a.shape(), {a.node()});
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double x = static_cast<double>(a.data()[i]);
        out.data()[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
    }
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa](detail::Node<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double x = static_cast<double>(pa->val[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
                const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
                pa->grad[i] += self.grad[i] * static_cast<T>(cdf + x * pdf);
            }
        };
    }
    return out;
}

// softmax over the last dim (any leading shape).
template <class T>
TensorT<T> softmax_lastdim(const TensorT<T>& a) {
    const int C = a.dim(a.ndim() - 1);
    const std::size_t rows = a.numel() / static_cast<std::size_t>(C);
    auto out = detail::make_result<T>(a.shape(), {a.node()});
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = a.data().data() + r * C;
        T* y = out.data().data() + r * C;
        T m = x[0];
        for (int c = 1; c < C; ++c) m = std::max(m, x[c]);
        T s = T(0);
        for (int c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - m);
            s += y[c];
        }
        for (int c = 0; c < C; ++c) y[c] /= s;
    }
    if (out.requires_grad()) {
        auto pa = a.node();
        auto self_node = out.node();
        out.node()->backfn = [pa, C, rows](detail::Node<T>& self) {
            pa->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.val.data() + r * C;
                const T* g = self.grad.data() + r * C;
                T dot = T(0);
                for (int c = 0; c < C; ++c) dot += y[c] * g[c];
                for (int c = 0; c < C; ++c) pa->grad[r * C + c] += y[c] * (g[c] - dot);
            }
        };
    }
    return out;
}

// LayerNorm over the last dim with affine params gamma/beta of shape [D].
template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta, T eps) {
    const int D = x.dim(x.ndim() - 1);
    if (gamma.numel() != static_cast<std::size_t>(D) || beta.numel() != static_cast<std::size_t>(D))
        shape_error("layer_norm", x.shape(), gamma.shape());
    const std::size_t rows = x.numel() / static_cast<std::size_t>(D);
    auto out = detail::make_result<T>(x.shape(), {x.node(), gamma.node(), beta.node()});
    std::vector<T> xhat(x.numel());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xv = x.data().data() + r * D;
        T mu = T(0);
        for (int d = 0; d < D; ++d) mu += xv[d];
        mu /= static_cast<T>(D);
        T var = T(0);
        for (int d = 0; d < D; ++d) var += (xv[d] - mu) * (xv[d] - mu);
        var /= static_cast<T>(D);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int d = 0; d < D; ++d) {
            xhat[r * D + d] = (xv[d] - mu) * is;
            out.data()[r * D + d] = gamma.data()[d] * xhat[r * D + d] + beta.data()[d];
        }
    }
    if (out.requires_grad()) {
        auto px = x.node();
        auto pg = gamma.node();
        auto pb = beta.node();
        out.node()->backfn = [px, pg, pb, D, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* g = self.grad.data() + r * D;
                const T* xh = xhat.data() + r * D;
                if (pg->requires_grad)
                    for (int d = 0; d < D; ++d) pg->grad[d] += g[d] * xh[d];
                if (pb->requires_grad)
                    for (int d = 0; d < D; ++d) pb->grad[d] += g[d];
                if (px->requires_grad) {
                    T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
                    std::vector<T> dxhat(D);
                    for (int d = 0; d < D; ++d) {
                        dxhat[d] = g[d] * pg->val[d];
                        mean_dxhat += dxhat[d];
                        mean_dxhat_xhat += dxhat[d] * xh[d];
                    }
                    mean_dxhat /= static_cast<T>(D);
                    mean_dxhat_xhat /= static_cast<T>(D);
                    for (int d = 0; d < D; ++d)
                        px->grad[r * D + d] += inv_std[r] * (dxhat[d] - mean_dxhat - xh[d] * mean_dxhat_xhat);
                }
            }
        };
    }
    return out;
}

// L2-normalize each row of [R,C] with a small epsilon under the sqrt.
template <class T>
TensorT<T> row_l2_normalize(const TensorT<T>& a, T eps = T(1e-12)) {
    if (a.ndim() != 2) shape_error("row_l2_normalize", a.shape(), a.shape());
    const int R = a.dim(0), C = a.dim(1);
    auto out = detail::make_result<T>(a.shape(), {a.node()});
    std::vector<T> inv_norm(R);
    for (int r = 0; r < R; ++r) {
        const T* x = a.data().data() + static_cast<std::size_t>(r) * C;
        T s = T(0);
        for (int c = 0; c < C; ++c) s += x[c] * x[c];
        inv_norm[r] = T(1) / std::sqrt(s + eps);
        for (int c = 0; c < C; ++c) out.data()[static_cast<std::size_t>(r) * C + c] = x[c] * inv_norm[r];
    }
    if (out.requires_grad()) {
        auto pa = a.node();
        out.node()->backfn = [pa, R, C, inv_norm = std::move(inv_norm)](detail::Node<T>& self) {
            pa->ensure_grad();
            for (int r = 0; r < R; ++r) {
                const T* x = pa->val.data() + static_cast<std::size_t>(r) * C;
                const T* g = self.grad.data() + static_cast<std::size_t>(r) * C;
                T dot = T(0);
                for (int c = 0; c < C; ++c) dot += g[c] * x[c];
                const T in = inv_norm[r];
                for (int c = 0; c < C; ++c)
                    pa->grad[static_cast<std::size_t>(r) * C + c] += g[c] * in - x[c] * dot * in * in * in;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// classification losses (fused, numerically stable)

// Mean cross-entropy of row logits [R,C] against integer targets.
template <class T>
TensorT<T> ce_rows(const TensorT<T>& logits, const std::vector<int>& targets) {
    if (logits.ndim() != 2 || static_cast<std::size_t>(logits.dim(0)) != targets.size())
        shape_error("ce_rows", logits.shape(), {static_cast<int>(targets.size())});
    const int R = logits.dim(0), C = logits.dim(1);
    for (int t : targets)
        if (t < 0 || t >= C) throw std::out_of_range("samora: ce_rows target out of range");
    auto out = detail::make_result<T>({1}, {logits.node()});
    std::vector<T> probs(logits.numel());
    T loss = T(0);
    for (int r = 0; r < R; ++r) {
        const T* x = logits.data().data() + static_cast<std::size_t>(r) * C;
        T m = x[0];
        for (int c = 1; c < C; ++c) m = std::max(m, x[c]);
        T s = T(0);
        for (int c = 0; c < C; ++c) {
            probs[static_cast<std::size_t>(r) * C + c] = std::exp(x[c] - m);
            s += probs[static_cast<std::size_t>(r) * C + c];
        }
        for (int c = 0; c < C; ++c) probs[static_cast<std::size_t>(r) * C + c] /= s;
        loss -= std::log(probs[static_cast<std::size_t>(r) * C + targets[r]] + T(1e-30));
    }
    out.data()[0] = loss / static_cast<T>(R);
    if (out.requires_grad()) {
        auto pl = logits.node();
        out.node()->backfn = [pl, targets, R, C, probs = std::move(probs)](detail::Node<T>& self) {
            pl->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(R);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) {
                    T p = probs[static_cast<std::size_t>(r) * C + c];
                    if (c == targets[r]) p -= T(1);
                    pl->grad[static_cast<std::size_t>(r) * C + c] += g * p;
                }
        };
    }
    return out;
}

// Mean pixelwise cross-entropy of class-first logits [C,H,W] against labels [H*W].
template <class T>
TensorT<T> ce_pixels(const TensorT<T>& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 3) shape_error("ce_pixels", logits.shape(), logits.shape());
    const int C = logits.dim(0);
    const std::size_t hw = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
    if (labels.size() != hw) shape_error("ce_pixels", logits.shape(), {static_cast<int>(labels.size())});
    for (int t : labels)
        if (t < 0 || t >= C) throw std::out_of_range("samora: ce_pixels label out of range");
    auto out = detail::make_result<T>({1}, {logits.node()});
    std::vector<T> probs(logits.numel());
    T loss = T(0);
    for (std::size_t p = 0; p < hw; ++p) {
        T m = logits.data()[p];
        for (int c = 1; c < C; ++c) m = std::max(m, logits.data()[c * hw + p]);
        T s = T(0);
        for (int c = 0; c < C; ++c) {
            probs[c * hw + p] = std::exp(logits.data()[c * hw + p] - m);
            s += probs[c * hw + p];
        }
        for (int c = 0; c < C; ++c) probs[c * hw + p] /= s;
        loss -= std::log(probs[static_cast<std::size_t>(labels[p]) * hw + p] + T(1e-30));
    }
    out.data()[0] = loss / static_cast<T>(hw);
    if (out.requires_grad()) {
        auto pl = logits.node();
        out.node()->backfn = [pl, labels, C, hw, probs = std::move(probs)](detail::Node<T>& self) {
            pl->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(hw);
            for (std::size_t p = 0; p < hw; ++p)
                for (int c = 0; c < C; ++c) {
                    T pr = probs[c * hw + p];
                    if (c == labels[p]) pr -= T(1);
                    pl->grad[c * hw + p] += g * pr;
                }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolutions

namespace detail {

template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo, T* cols) {
    // cols layout: [C*kh*kw, Ho*Wo]
    const std::size_t owh = static_cast<std::size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c)
        for (int a = 0; a < kh; ++a)
            for (int b = 0; b < kw; ++b) {
                T* dst = cols + ((static_cast<std::size_t>(c) * kh + a) * kw + b) * owh;
                for (int i = 0; i < Ho; ++i) {
                    const int src_i = i * stride + a - pad;
                    for (int j = 0; j < Wo; ++j) {
                        const int src_j = j * stride + b - pad;
                        dst[static_cast<std::size_t>(i) * Wo + j] =
                            (src_i >= 0 && src_i < H && src_j >= 0 && src_j < W)
                                ? x[(static_cast<std::size_t>(c) * H + src_i) * W + src_j]
                                : T(0);
                    }
                }
            }
}

template <class T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo, T* x) {
    const std::size_t owh = static_cast<std::size_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c)
        for (int a = 0; a < kh; ++a)
            for (int b = 0; b < kw; ++b) {
                const T* src = cols + ((static_cast<std::size_t>(c) * kh + a) * kw + b) * owh;
                for (int i = 0; i < Ho; ++i) {
                    const int dst_i = i * stride + a - pad;
                    if (dst_i < 0 || dst_i >= H) continue;
                    for (int j = 0; j < Wo; ++j) {
                        const int dst_j = j * stride + b - pad;
                        if (dst_j < 0 || dst_j >= W) continue;
                        x[(static_cast<std::size_t>(c) * H + dst_i) * W + dst_j] += src[static_cast<std::size_t>(i) * Wo + j];
                    }
                }
            }
}

}  // namespace detail

// x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] -> [Cout,Ho,Wo]
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride, int pad) {
    if (x.ndim() != 3 || w.ndim() != 4 || x.dim(0) != w.dim(1)) shape_error("conv2d", x.shape(), w.shape());
    const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) shape_error("conv2d output", x.shape(), w.shape());
    const int K = Cin * kh * kw;
    const std::size_t owh = static_cast<std::size_t>(Ho) * Wo;
    std::vector<T> cols(static_cast<std::size_t>(K) * owh);
    detail::im2col(x.data().data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
    auto out = detail::make_result<T>({Cout, Ho, Wo}, {x.node(), w.node(), b.node()});
    detail::ConstMatMap<T> Wm(w.data().data(), Cout, K);
    detail::ConstMatMap<T> Cm(cols.data(), K, static_cast<int>(owh));
    detail::MatMap<T> Om(out.data().data(), Cout, static_cast<int>(owh));
    Om.noalias() = Wm * Cm;
    for (int c = 0; c < Cout; ++c)
        for (std::size_t i = 0; i < owh; ++i) out.data()[c * owh + i] += b.data()[c];
    if (out.requires_grad()) {
        auto px = x.node();
        auto pw = w.node();
        auto pb = b.node();
        out.node()->backfn = [px, pw, pb, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, owh,
                              cols = std::move(cols)](detail::Node<T>& self) {
            detail::ConstMatMap<T> G(self.grad.data(), Cout, static_cast<int>(owh));
            if (pw->requires_grad) {
                pw->ensure_grad();
                detail::ConstMatMap<T> Cm(cols.data(), K, static_cast<int>(owh));
                detail::MatMap<T>(pw->grad.data(), Cout, K).noalias() += G * Cm.transpose();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (int c = 0; c < Cout; ++c) {
                    T s = T(0);
                    for (std::size_t i = 0; i < owh; ++i) s += self.grad[c * owh + i];
                    pb->grad[c] += s;
                }
            }
            if (px->requires_grad) {
                px->ensure_grad();
                std::vector<T> dcols(static_cast<std::size_t>(K) * owh);
                detail::ConstMatMap<T> Wm(pw->val.data(), Cout, K);
                detail::MatMap<T>(dcols.data(), K, static_cast<int>(owh)).noalias() = Wm.transpose() * G;
                detail::col2im_add(dcols.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo, px->grad.data());
            }
        };
    }
    return out;
}

// x: [Cin,H,W], w: [Cin,Cout,kh,kw], b: [Cout] -> [Cout,(H-1)*s+kh,(W-1)*s+kw]
template <class T>
TensorT<T> conv_transpose2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride) {
    if (x.ndim() != 3 || w.ndim() != 4 || x.dim(0) != w.dim(0)) shape_error("conv_transpose2d", x.shape(), w.shape());
    const int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const int Ho = (H - 1) * stride + kh;
    const int Wo = (W - 1) * stride + kw;
    const int K = Cout * kh * kw;
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    // G = W^T X with W as [Cin, K], X as [Cin, H*W]
    std::vector<T> g(static_cast<std::size_t>(K) * hw);
    {
        detail::ConstMatMap<T> Wm(w.data().data(), Cin, K);
        detail::ConstMatMap<T> Xm(x.data().data(), Cin, static_cast<int>(hw));
        detail::MatMap<T>(g.data(), K, static_cast<int>(hw)).noalias() = Wm.transpose() * Xm;
    }
    auto out = detail::make_result<T>({Cout, Ho, Wo}, {x.node(), w.node(), b.node()});
    auto& ov = out.data();
    for (int co = 0; co < Cout; ++co)
        for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i) ov[co * static_cast<std::size_t>(Ho) * Wo + i] = b.data()[co];
    for (int co = 0; co < Cout; ++co)
        for (int a = 0; a < kh; ++a)
            for (int bb = 0; bb < kw; ++bb) {
                const T* src = g.data() + ((static_cast<std::size_t>(co) * kh + a) * kw + bb) * hw;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        ov[(static_cast<std::size_t>(co) * Ho + (i * stride + a)) * Wo + (j * stride + bb)] +=
                            src[static_cast<std::size_t>(i) * W + j];
            }
    if (out.requires_grad()) {
        auto px = x.node();
        auto pw = w.node();
        auto pb = b.node();
        out.node()->backfn = [px, pw, pb, Cin, H, W, Cout, kh, kw, stride, Ho, Wo, K, hw](detail::Node<T>& self) {
            // dG[k, ij] = dY gathered at the scatter positions
            std::vector<T> dg(static_cast<std::size_t>(K) * hw, T(0));
            for (int co = 0; co < Cout; ++co)
                for (int a = 0; a < kh; ++a)
                    for (int bb = 0; bb < kw; ++bb) {
                        T* dst = dg.data() + ((static_cast<std::size_t>(co) * kh + a) * kw + bb) * hw;
                        for (int i = 0; i < H; ++i)
                            for (int j = 0; j < W; ++j)
                                dst[static_cast<std::size_t>(i) * W + j] =
                                    self.grad[(static_cast<std::size_t>(co) * Ho + (i * stride + a)) * Wo +
                                              (j * stride + bb)];
                    }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (int co = 0; co < Cout; ++co) {
                    T s = T(0);
                    for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i)
                        s += self.grad[co * static_cast<std::size_t>(Ho) * Wo + i];
                    pb->grad[co] += s;
                }
            }
            if (pw->requires_grad) {
                pw->ensure_grad();
                detail::ConstMatMap<T> Xm(px->val.data(), Cin, static_cast<int>(hw));
                detail::ConstMatMap<T> dGm(dg.data(), K, static_cast<int>(hw));
                detail::MatMap<T>(pw->grad.data(), Cin, K).noalias() += Xm * dGm.transpose();
            }
            if (px->requires_grad) {
                px->ensure_grad();
                detail::ConstMatMap<T> Wm(pw->val.data(), Cin, K);
                detail::ConstMatMap<T> dGm(dg.data(), K, static_cast<int>(hw));
                detail::MatMap<T>(px->grad.data(), Cin, static_cast<int>(hw)).noalias() += Wm * dGm;
            }
        };
    }
    return out;
}

// [C,H,W] -> [L, C*ps*ps] with L = (H/ps)*(W/ps), row-major patch order.
template <class T>
TensorT<T> patchify(const TensorT<T>& x, int ps) {
    if (x.ndim() != 3 || x.dim(1) % ps != 0 || x.dim(2) % ps != 0) shape_error("patchify", x.shape(), {ps});
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int gh = H / ps, gw = W / ps;
    const int L = gh * gw, D = C * ps * ps;
    auto out = detail::make_result<T>({L, D}, {x.node()});
    for (int gi = 0; gi < gh; ++gi)
        for (int gj = 0; gj < gw; ++gj)
            for (int c = 0; c < C; ++c)
                for (int a = 0; a < ps; ++a)
                    for (int b = 0; b < ps; ++b)
                        out.data()[(static_cast<std::size_t>(gi) * gw + gj) * D + (static_cast<std::size_t>(c) * ps + a) * ps + b] =
                            x.data()[(static_cast<std::size_t>(c) * H + gi * ps + a) * W + gj * ps + b];
    if (out.requires_grad()) {
        auto px = x.node();
        out.node()->backfn = [px, C, H, W, ps, gh, gw, D](detail::Node<T>& self) {
            px->ensure_grad();
            for (int gi = 0; gi < gh; ++gi)
                for (int gj = 0; gj < gw; ++gj)
                    for (int c = 0; c < C; ++c)
                        for (int a = 0; a < ps; ++a)
                            for (int b = 0; b < ps; ++b)
                                px->grad[(static_cast<std::size_t>(c) * H + gi * ps + a) * W + gj * ps + b] +=
                                    self.grad[(static_cast<std::size_t>(gi) * gw + gj) * D +
                                              (static_cast<std::size_t>(c) * ps + a) * ps + b];
        };
    }
    return out;
}

}  // namespace samora
