#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "pedro/rng.hpp"

namespace pedro {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Thread-local autodiff switch. Generation and benchmarking run with grads
// off so no graph is recorded.
inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until first backward touches this node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorImpl<S>>> parents;
    // Accumulates this->grad into parents. Must never own a shared_ptr to its
    // own node (capture the output impl as a raw pointer): the node owns this
    // function, so a self-reference would leak the whole graph.
    std::function<void()> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

// Value-semantics handle onto a shared node in the autodiff graph.
template <typename S>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape) { return filled(shape, S(0)); }
    static Tensor ones(const Shape& shape) { return filled(shape, S(1)); }

    static Tensor filled(const Shape& shape, S v) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<S>>();
        t.impl_->shape = shape;
        t.impl_->value.assign(shape_numel(shape), v);
        return t;
    }

    static Tensor from_data(const Shape& shape, std::vector<S> data) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("from_data: shape/data size mismatch");
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<S>>();
        t.impl_->shape = shape;
        t.impl_->value = std::move(data);
        return t;
    }

    static Tensor scalar(S v) { return filled({1}, v); }

    static Tensor randn(const Shape& shape, GaussianRng& rng, S stddev) {
        Tensor t = zeros(shape);
        for (auto& x : t.impl_->value) x = static_cast<S>(rng.sample() * static_cast<double>(stddev));
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
    std::size_t numel() const { return impl_->value.size(); }

    std::vector<S>& data() { return impl_->value; }
    const std::vector<S>& data() const { return impl_->value; }

    S item() const {
        if (numel() != 1) throw std::runtime_error("item(): tensor is not scalar");
        return impl_->value[0];
    }

    S& at(int i) { return impl_->value[static_cast<std::size_t>(i)]; }
    S at(int i) const { return impl_->value[static_cast<std::size_t>(i)]; }
    S& at(int i, int j) {
        return impl_->value[static_cast<std::size_t>(i) * dim(1) + j];
    }
    S at(int i, int j) const {
        return impl_->value[static_cast<std::size_t>(i) * dim(1) + j];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        impl_->requires_grad = b;
        return *this;
    }

    // Gradient buffer; allocated (zeroed) on demand.
    std::vector<S>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    bool has_grad() const { return impl_->grad.size() == impl_->value.size(); }
    void zero_grad() {
        if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
    }

    // Deep copy of the values, detached from any graph.
    Tensor clone_detached() const {
        Tensor t = from_data(shape(), impl_->value);
        return t;
    }

    std::shared_ptr<TensorImpl<S>> impl() const { return impl_; }

    // Reverse-mode sweep from this scalar. Grads accumulate; callers reset
    // between steps. Each reachable node is visited exactly once.
    void backward() const {
        if (numel() != 1) throw std::runtime_error("backward: loss must be scalar");
        // iterative post-order over grad-requiring subgraph
        std::vector<TensorImpl<S>*> topo;
        std::unordered_set<TensorImpl<S>*> seen;
        struct Frame {
            TensorImpl<S>* node;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        if (impl_->requires_grad) stack.push_back({impl_.get(), 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent == 0) {
                if (seen.count(f.node)) {
                    stack.pop_back();
                    continue;
                }
                seen.insert(f.node);
            }
            if (f.next_parent < f.node->parents.size()) {
                TensorImpl<S>* p = f.node->parents[f.next_parent++].get();
                if (p->requires_grad && !seen.count(p)) stack.push_back({p, 0});
            } else {
                topo.push_back(f.node);
                stack.pop_back();
            }
        }
        // Non-leaf grads are scratch space for this sweep; only leaves
        // accumulate across repeated backward calls.
        for (TensorImpl<S>* node : topo)
            if (node->backprop) node->grad.assign(node->value.size(), S(0));
        impl_->ensure_grad();
        impl_->grad[0] += S(1);
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop();
        }
    }

  private:
    std::shared_ptr<TensorImpl<S>> impl_;
};

namespace detail {

template <typename S>
inline bool track_grad(std::initializer_list<const Tensor<S>*> parents) {
    if (!g_grad_enabled) return false;
    for (const Tensor<S>* p : parents)
        if ((*p).requires_grad()) return true;
    return false;
}

template <typename S>
inline void attach(Tensor<S>& out, const char* op,
                   std::vector<std::shared_ptr<TensorImpl<S>>> parents,
                   std::function<void()> fn) {
    auto impl = out.impl();
    impl->requires_grad = true;
    impl->op = op;
    impl->parents = std::move(parents);
    impl->backprop = std::move(fn);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::track_grad<S>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(); auto* oi = out.impl().get();
        detail::attach(out, "add", {ai, bi}, [ai, bi, oi]() {
            const std::size_t m = oi->value.size();
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) bi->grad[i] += oi->grad[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (detail::track_grad<S>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(); auto* oi = out.impl().get();
        detail::attach(out, "sub", {ai, bi}, [ai, bi, oi]() {
            const std::size_t m = oi->value.size();
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) bi->grad[i] -= oi->grad[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (detail::track_grad<S>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(); auto* oi = out.impl().get();
        detail::attach(out, "mul", {ai, bi}, [ai, bi, oi]() {
            const std::size_t m = oi->value.size();
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    ai->grad[i] += oi->grad[i] * bi->value[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    bi->grad[i] += oi->grad[i] * ai->value[i];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (detail::track_grad<S>({&a})) {
        auto ai = a.impl(); auto* oi = out.impl().get();
        detail::attach(out, "scale", {ai}, [ai, oi, c]() {
            ai->ensure_grad();
            const std::size_t m = oi->value.size();
            for (std::size_t i = 0; i < m; ++i) ai->grad[i] += oi->grad[i] * c;
        });
    }
    return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
    S acc = 0;
    for (S v : a.data()) acc += v;
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (detail::track_grad<S>({&a})) {
        auto ai = a.impl(); auto* oi = out.impl().get();
        detail::attach(out, "sum", {ai}, [ai, oi]() {
            ai->ensure_grad();
            const S g = oi->grad[0];
            for (auto& x : ai->grad) x += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matrix ops (2-D, row-major)

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: bad shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (int i = 0; i < m; ++i) {
        S* orow = po + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const S av = pa[static_cast<std::size_t>(i) * k + kk];
            const S* brow = pb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (detail::track_grad<S>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(); auto* oi = out.impl().get();
        detail::attach(out, "matmul", {ai, bi}, [ai, bi, oi, m, k, n]() {
            const S* g = oi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                S* ga = ai->grad.data();
                const S* pbv = bi->value.data();
                for (int i = 0; i < m; ++i) {
                    const S* grow = g + static_cast<std::size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const S* brow = pbv + static_cast<std::size_t>(kk) * n;
                        S acc = 0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[static_cast<std::size_t>(i) * k + kk] += acc;
                    }
                }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                S* gb = bi->grad.data();
                const S* pav = ai->value.data();
                for (int i = 0; i < m; ++i) {
                    const S* grow = g + static_cast<std::size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const S av = pav[static_cast<std::size_t>(i) * k + kk];
                        S* gbrow = gb + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

// a (m,k) x b(n,k)^T -> (m,n); rows of b are dotted against rows of a.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: bad shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()) + "^T");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (int i = 0; i < m; ++i) {
        const S* arow = pa + static_cast<std::size_t>(i) * k;
        S* orow = po + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* brow = pb + static_cast<std::size_t>(j) * k;
            S acc = 0;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            orow[j] = acc;
        }
    }
    if (detail::track_grad<S>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(); auto* oi = out.impl().get();
        detail::attach(out, "matmul_nt", {ai, bi}, [ai, bi, oi, m, k, n]() {
            const S* g = oi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                S* ga = ai->grad.data();
                const S* pbv = bi->value.data();
                for (int i = 0; i < m; ++i) {
                    const S* grow = g + static_cast<std::size_t>(i) * n;
                    S* garow = ga + static_cast<std::size_t>(i) * k;
                    for (int j = 0; j < n; ++j) {
                        const S gv = grow[j];
                        const S* brow = pbv + static_cast<std::size_t>(j) * k;
                        for (int kk = 0; kk < k; ++kk) garow[kk] += gv * brow[kk];
                    }
                }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                S* gb = bi->grad.data();
                const S* pav = ai->value.data();
                for (int i = 0; i < m; ++i) {
                    const S* grow = g + static_cast<std::size_t>(i) * n;
                    const S* arow = pav + static_cast<std::size_t>(i) * k;
                    for (int j = 0; j < n; ++j) {
                        const S gv = grow[j];
                        S* gbrow = gb + static_cast<std::size_t>(j) * k;
                        for (int kk = 0; kk < k; ++kk) gbrow[kk] += gv * arow[kk];
                    }
                }
            }
        });
    }
    return out;
}

// out[i,j] = x[i,j] * v[j]
template <typename S>
Tensor<S> scale_columns(const Tensor<S>& x, const Tensor<S>& v) {
    if (x.ndim() != 2 || v.ndim() != 1 || v.dim(0) != x.dim(1))
        throw std::invalid_argument("scale_columns: bad shapes");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    const S* px = x.data().data();
    const S* pv = v.data().data();
    S* po = out.data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            po[static_cast<std::size_t>(i) * n + j] =
                px[static_cast<std::size_t>(i) * n + j] * pv[j];
    if (detail::track_grad<S>({&x, &v})) {
        auto xi = x.impl(), vi = v.impl(); auto* oi = out.impl().get();
        detail::attach(out, "scale_columns", {xi, vi}, [xi, vi, oi, m, n]() {
            const S* g = oi->grad.data();
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        xi->grad[static_cast<std::size_t>(i) * n + j] +=
                            g[static_cast<std::size_t>(i) * n + j] * vi->value[j];
            }
            if (vi->requires_grad) {
                vi->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        vi->grad[j] += g[static_cast<std::size_t>(i) * n + j] *
                                       xi->value[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return out;
}

// out[i,j] = x[i,j] + v[j]
template <typename S>
Tensor<S> add_columns(const Tensor<S>& x, const Tensor<S>& v) {
    if (x.ndim() != 2 || v.ndim() != 1 || v.dim(0) != x.dim(1))
        throw std::invalid_argument("add_columns: bad shapes");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + v.at(j);
    if (detail::track_grad<S>({&x, &v})) {
        auto xi = x.impl(), vi = v.impl(); auto* oi = out.impl().get();
        detail::attach(out, "add_columns", {xi, vi}, [xi, vi, oi, m, n]() {
            const S* g = oi->grad.data();
            if (xi->requires_grad) {
                xi->ensure_grad();
                const std::size_t total = static_cast<std::size_t>(m) * n;
                for (std::size_t i = 0; i < total; ++i) xi->grad[i] += g[i];
            }
            if (vi->requires_grad) {
                vi->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        vi->grad[j] += g[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// slicing / reshaping (copying; backward scatters)

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int lo, int len) {
    if (x.ndim() != 2 || lo < 0 || len <= 0 || lo + len > x.dim(1))
        throw std::invalid_argument("slice_cols: bad range");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, len});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, lo + j);
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "slice_cols", {xi}, [xi, oi, m, n, lo, len]() {
            xi->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < len; ++j)
                    xi->grad[static_cast<std::size_t>(i) * n + lo + j] +=
                        oi->grad[static_cast<std::size_t>(i) * len + j];
        });
    }
    return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int lo, int count) {
    if (x.ndim() != 2 || lo < 0 || count <= 0 || lo + count > x.dim(0))
        throw std::invalid_argument("slice_rows: bad range");
    const int n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({count, n});
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(lo + i, j);
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "slice_rows", {xi}, [xi, oi, lo, count, n]() {
            xi->ensure_grad();
            for (int i = 0; i < count; ++i)
                for (int j = 0; j < n; ++j)
                    xi->grad[static_cast<std::size_t>(lo + i) * n + j] +=
                        oi->grad[static_cast<std::size_t>(i) * n + j];
        });
    }
    return out;
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int m = parts[0].dim(0);
    int total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != m)
            throw std::invalid_argument("concat_cols: row mismatch");
        total += p.dim(1);
    }
    Tensor<S> out = Tensor<S>::zeros({m, total});
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.dim(1); ++j) out.at(i, off + j) = p.at(i, j);
        off += p.dim(1);
    }
    bool track = false;
    if (g_grad_enabled)
        for (const auto& p : parts)
            if (p.requires_grad()) track = true;
    if (track) {
        std::vector<std::shared_ptr<TensorImpl<S>>> parents;
        std::vector<int> widths;
        for (const auto& p : parts) {
            parents.push_back(p.impl());
            widths.push_back(p.dim(1));
        }
        auto* oi = out.impl().get();
        auto ps = parents;
        detail::attach(out, "concat_cols", std::move(parents),
                       [ps, oi, widths, m, total]() {
                           int off2 = 0;
                           for (std::size_t k = 0; k < ps.size(); ++k) {
                               const int w = widths[k];
                               if (ps[k]->requires_grad) {
                                   ps[k]->ensure_grad();
                                   for (int i = 0; i < m; ++i)
                                       for (int j = 0; j < w; ++j)
                                           ps[k]->grad[static_cast<std::size_t>(i) * w + j] +=
                                               oi->grad[static_cast<std::size_t>(i) * total +
                                                        off2 + j];
                               }
                               off2 += w;
                           }
                       });
    }
    return out;
}

// single row of a matrix as a 1-D tensor
template <typename S>
Tensor<S> row(const Tensor<S>& x, int i) {
    if (x.ndim() != 2 || i < 0 || i >= x.dim(0))
        throw std::invalid_argument("row: bad index");
    const int n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n});
    for (int j = 0; j < n; ++j) out.at(j) = x.at(i, j);
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "row", {xi}, [xi, oi, i, n]() {
            xi->ensure_grad();
            for (int j = 0; j < n; ++j)
                xi->grad[static_cast<std::size_t>(i) * n + j] += oi->grad[j];
        });
    }
    return out;
}

// 1-D vector viewed as a single-row matrix
template <typename S>
Tensor<S> as_row(const Tensor<S>& v) {
    if (v.ndim() != 1) throw std::invalid_argument("as_row: expects 1-D");
    const int n = v.dim(0);
    Tensor<S> out = Tensor<S>::from_data({1, n}, v.data());
    if (detail::track_grad<S>({&v})) {
        auto vi = v.impl(); auto* oi = out.impl().get();
        detail::attach(out, "as_row", {vi}, [vi, oi, n]() {
            vi->ensure_grad();
            for (int j = 0; j < n; ++j) vi->grad[j] += oi->grad[j];
        });
    }
    return out;
}

template <typename S>
Tensor<S> slice_vec(const Tensor<S>& v, int lo, int len) {
    if (v.ndim() != 1 || lo < 0 || len <= 0 || lo + len > v.dim(0))
        throw std::invalid_argument("slice_vec: bad range");
    Tensor<S> out = Tensor<S>::zeros({len});
    for (int j = 0; j < len; ++j) out.at(j) = v.at(lo + j);
    if (detail::track_grad<S>({&v})) {
        auto vi = v.impl(); auto* oi = out.impl().get();
        detail::attach(out, "slice_vec", {vi}, [vi, oi, lo, len]() {
            vi->ensure_grad();
            for (int j = 0; j < len; ++j) vi->grad[lo + j] += oi->grad[j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions over rows (poolers)

template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
    if (x.ndim() != 2) throw std::invalid_argument("mean_rows: expects 2-D");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j) += x.at(i, j);
    for (int j = 0; j < n; ++j) out.at(j) /= static_cast<S>(m);
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "mean_rows", {xi}, [xi, oi, m, n]() {
            xi->ensure_grad();
            const S inv = S(1) / static_cast<S>(m);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    xi->grad[static_cast<std::size_t>(i) * n + j] += oi->grad[j] * inv;
        });
    }
    return out;
}

template <typename S>
Tensor<S> max_rows(const Tensor<S>& x) {
    if (x.ndim() != 2) throw std::invalid_argument("max_rows: expects 2-D");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros({n});
    std::vector<int> argmax(static_cast<std::size_t>(n), 0);
    for (int j = 0; j < n; ++j) {
        S best = x.at(0, j);
        int bi = 0;
        for (int i = 1; i < m; ++i) {
            if (x.at(i, j) > best) {
                best = x.at(i, j);
                bi = i;
            }
        }
        out.at(j) = best;
        argmax[static_cast<std::size_t>(j)] = bi;
    }
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "max_rows", {xi}, [xi, oi, argmax, n]() {
            xi->ensure_grad();
            for (int j = 0; j < n; ++j)
                xi->grad[static_cast<std::size_t>(argmax[static_cast<std::size_t>(j)]) * n +
                         j] += oi->grad[j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const std::size_t n = out.numel();
    const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
    for (std::size_t i = 0; i < n; ++i) {
        const S v = x.data()[i];
        out.data()[i] = S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2));
    }
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "gelu", {xi}, [xi, oi, inv_sqrt2]() {
            xi->ensure_grad();
            const std::size_t m = oi->value.size();
            const S inv_sqrt_2pi = static_cast<S>(0.39894228040143267794);
            for (std::size_t i = 0; i < m; ++i) {
                const S v = xi->value[i];
                const S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
                const S pdf = inv_sqrt_2pi * std::exp(S(-0.5) * v * v);
                xi->grad[i] += oi->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.data()[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "relu", {xi}, [xi, oi]() {
            xi->ensure_grad();
            const std::size_t m = oi->value.size();
            for (std::size_t i = 0; i < m; ++i)
                if (xi->value[i] > S(0)) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax family (max-subtracted)

namespace detail {

template <typename S>
void softmax_slice(const S* x, S* y, int n, int stride) {
    S mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[static_cast<std::size_t>(i) * stride]);
    S denom = 0;
    for (int i = 0; i < n; ++i) {
        const S e = std::exp(x[static_cast<std::size_t>(i) * stride] - mx);
        y[static_cast<std::size_t>(i) * stride] = e;
        denom += e;
    }
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i) * stride] /= denom;
}

template <typename S>
void softmax_backward_slice(const S* y, const S* gy, S* gx, int n, int stride) {
    S dot = 0;
    for (int i = 0; i < n; ++i)
        dot += y[static_cast<std::size_t>(i) * stride] * gy[static_cast<std::size_t>(i) * stride];
    for (int i = 0; i < n; ++i)
        gx[static_cast<std::size_t>(i) * stride] +=
            y[static_cast<std::size_t>(i) * stride] *
            (gy[static_cast<std::size_t>(i) * stride] - dot);
}

}  // namespace detail

// softmax along `axis` of a 1-D or 2-D tensor
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
    if (x.ndim() == 1) {
        if (axis != 0) throw std::invalid_argument("softmax: invalid axis for 1-D");
        Tensor<S> out = Tensor<S>::zeros(x.shape());
        detail::softmax_slice(x.data().data(), out.data().data(), x.dim(0), 1);
        if (detail::track_grad<S>({&x})) {
            auto xi = x.impl(); auto* oi = out.impl().get();
            const int n = x.dim(0);
            detail::attach(out, "softmax", {xi}, [xi, oi, n]() {
                xi->ensure_grad();
                detail::softmax_backward_slice(oi->value.data(), oi->grad.data(),
                                               xi->grad.data(), n, 1);
            });
        }
        return out;
    }
    if (x.ndim() != 2 || (axis != 0 && axis != 1))
        throw std::invalid_argument("softmax: invalid axis");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    if (axis == 1) {
        for (int i = 0; i < m; ++i)
            detail::softmax_slice(x.data().data() + static_cast<std::size_t>(i) * n,
                                  out.data().data() + static_cast<std::size_t>(i) * n, n, 1);
    } else {
        for (int j = 0; j < n; ++j)
            detail::softmax_slice(x.data().data() + j, out.data().data() + j, m, n);
    }
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "softmax", {xi}, [xi, oi, m, n, axis]() {
            xi->ensure_grad();
            if (axis == 1) {
                for (int i = 0; i < m; ++i)
                    detail::softmax_backward_slice(
                        oi->value.data() + static_cast<std::size_t>(i) * n,
                        oi->grad.data() + static_cast<std::size_t>(i) * n,
                        xi->grad.data() + static_cast<std::size_t>(i) * n, n, 1);
            } else {
                for (int j = 0; j < n; ++j)
                    detail::softmax_backward_slice(oi->value.data() + j, oi->grad.data() + j,
                                                   xi->grad.data() + j, m, n);
            }
        });
    }
    return out;
}

// Row-wise causal softmax over attention scores. Row i of `x` may look at
// columns j <= first_pos + i; masked entries come out exactly zero.
template <typename S>
Tensor<S> softmax_causal_rows(const Tensor<S>& x, int first_pos) {
    if (x.ndim() != 2) throw std::invalid_argument("softmax_causal_rows: expects 2-D");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (int i = 0; i < m; ++i) {
        const int valid = std::min(first_pos + i + 1, n);
        if (valid <= 0) throw std::invalid_argument("softmax_causal_rows: empty row");
        detail::softmax_slice(x.data().data() + static_cast<std::size_t>(i) * n,
                              out.data().data() + static_cast<std::size_t>(i) * n, valid, 1);
    }
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "softmax_causal", {xi}, [xi, oi, m, n, first_pos]() {
            xi->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const int valid = std::min(first_pos + i + 1, n);
                detail::softmax_backward_slice(
                    oi->value.data() + static_cast<std::size_t>(i) * n,
                    oi->grad.data() + static_cast<std::size_t>(i) * n,
                    xi->grad.data() + static_cast<std::size_t>(i) * n, valid, 1);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization, rotary, embedding, loss

template <typename S>
Tensor<S> rms_norm(const Tensor<S>& x, const Tensor<S>& gain, S eps) {
    if (x.ndim() != 2 || gain.ndim() != 1 || gain.dim(0) != x.dim(1))
        throw std::invalid_argument("rms_norm: bad shapes");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    std::vector<S> inv(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        S ms = 0;
        for (int j = 0; j < n; ++j) ms += x.at(i, j) * x.at(i, j);
        ms /= static_cast<S>(n);
        inv[static_cast<std::size_t>(i)] = S(1) / std::sqrt(ms + eps);
        for (int j = 0; j < n; ++j)
            out.at(i, j) = x.at(i, j) * inv[static_cast<std::size_t>(i)] * gain.at(j);
    }
    if (detail::track_grad<S>({&x, &gain})) {
        auto xi = x.impl(), gi = gain.impl(); auto* oi = out.impl().get();
        detail::attach(out, "rms_norm", {xi, gi}, [xi, gi, oi, inv, m, n]() {
            const S* g = oi->grad.data();
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int i = 0; i < m; ++i) {
                    const S iv = inv[static_cast<std::size_t>(i)];
                    S dot = 0;
                    for (int j = 0; j < n; ++j)
                        dot += g[static_cast<std::size_t>(i) * n + j] * gi->value[j] *
                               xi->value[static_cast<std::size_t>(i) * n + j];
                    const S c = dot * iv * iv * iv / static_cast<S>(n);
                    for (int j = 0; j < n; ++j)
                        xi->grad[static_cast<std::size_t>(i) * n + j] +=
                            g[static_cast<std::size_t>(i) * n + j] * gi->value[j] * iv -
                            c * xi->value[static_cast<std::size_t>(i) * n + j];
                }
            }
            if (gi->requires_grad) {
                gi->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        gi->grad[j] += g[static_cast<std::size_t>(i) * n + j] *
                                       xi->value[static_cast<std::size_t>(i) * n + j] *
                                       inv[static_cast<std::size_t>(i)];
            }
        });
    }
    return out;
}

// Rotary position embedding over concatenated heads. Row i of x gets the
// rotation for absolute position first_pos + i.
template <typename S>
Tensor<S> rotary(const Tensor<S>& x, int n_heads, int first_pos, S base = S(10000)) {
    if (x.ndim() != 2 || x.dim(1) % n_heads != 0)
        throw std::invalid_argument("rotary: bad shapes");
    const int m = x.dim(0), d = x.dim(1);
    const int dh = d / n_heads;
    if (dh % 2 != 0) throw std::invalid_argument("rotary: head dim must be even");
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    std::vector<S> inv_freq(static_cast<std::size_t>(dh / 2));
    for (int p = 0; p < dh / 2; ++p)
        inv_freq[static_cast<std::size_t>(p)] =
            std::pow(base, static_cast<S>(-2.0 * p / dh));
    auto apply = [inv_freq, n_heads, dh](const S* src, S* dst, int pos, bool inverse) {
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * dh;
            for (int p = 0; p < dh / 2; ++p) {
                const S theta = static_cast<S>(pos) * inv_freq[static_cast<std::size_t>(p)];
                const S c = std::cos(theta);
                const S s = inverse ? -std::sin(theta) : std::sin(theta);
                const S x0 = src[off + 2 * p];
                const S x1 = src[off + 2 * p + 1];
                dst[off + 2 * p] = c * x0 - s * x1;
                dst[off + 2 * p + 1] = s * x0 + c * x1;
            }
        }
    };
    for (int i = 0; i < m; ++i)
        apply(x.data().data() + static_cast<std::size_t>(i) * d,
              out.data().data() + static_cast<std::size_t>(i) * d, first_pos + i, false);
    if (detail::track_grad<S>({&x})) {
        auto xi = x.impl(); auto* oi = out.impl().get();
        detail::attach(out, "rotary", {xi}, [xi, oi, apply, m, d, first_pos]() {
            xi->ensure_grad();
            std::vector<S> tmp(static_cast<std::size_t>(d));
            for (int i = 0; i < m; ++i) {
                apply(oi->grad.data() + static_cast<std::size_t>(i) * d, tmp.data(),
                      first_pos + i, true);
                for (int j = 0; j < d; ++j)
                    xi->grad[static_cast<std::size_t>(i) * d + j] += tmp[static_cast<std::size_t>(j)];
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw std::invalid_argument("embedding: table must be 2-D");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw std::out_of_range("embedding: token id " + std::to_string(id) +
                                    " out of range (vocab " + std::to_string(v) + ")");
    const int l = static_cast<int>(ids.size());
    Tensor<S> out = Tensor<S>::zeros({l, d});
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = table.at(ids[static_cast<std::size_t>(i)], j);
    if (detail::track_grad<S>({&table})) {
        auto ti = table.impl(); auto* oi = out.impl().get();
        detail::attach(out, "embedding", {ti}, [ti, oi, ids, l, d]() {
            ti->ensure_grad();
            for (int i = 0; i < l; ++i)
                for (int j = 0; j < d; ++j)
                    ti->grad[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d + j] +=
                        oi->grad[static_cast<std::size_t>(i) * d + j];
        });
    }
    return out;
}

// Sum of token-level cross-entropy over rows whose target id is >= 0.
// Rows with target -1 are ignored (prompt positions).
template <typename S>
Tensor<S> cross_entropy_sum(const Tensor<S>& logits, const std::vector<int>& targets) {
    if (logits.ndim() != 2 ||
        static_cast<int>(targets.size()) != logits.dim(0))
        throw std::invalid_argument("cross_entropy_sum: bad shapes");
    const int l = logits.dim(0), v = logits.dim(1);
    S total = 0;
    std::vector<S> lse(static_cast<std::size_t>(l), S(0));
    for (int i = 0; i < l; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0) continue;
        if (t >= v) throw std::out_of_range("cross_entropy_sum: target out of range");
        const S* xr = logits.data().data() + static_cast<std::size_t>(i) * v;
        S mx = xr[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, xr[j]);
        S denom = 0;
        for (int j = 0; j < v; ++j) denom += std::exp(xr[j] - mx);
        lse[static_cast<std::size_t>(i)] = mx + std::log(denom);
        total += lse[static_cast<std::size_t>(i)] - xr[t];
    }
    Tensor<S> out = Tensor<S>::scalar(total);
    if (detail::track_grad<S>({&logits})) {
        auto li = logits.impl(); auto* oi = out.impl().get();
        detail::attach(out, "cross_entropy", {li}, [li, oi, targets, lse, l, v]() {
            li->ensure_grad();
            const S g = oi->grad[0];
            for (int i = 0; i < l; ++i) {
                const int t = targets[static_cast<std::size_t>(i)];
                if (t < 0) continue;
                const S* xr = li->value.data() + static_cast<std::size_t>(i) * v;
                S* gr = li->grad.data() + static_cast<std::size_t>(i) * v;
                for (int j = 0; j < v; ++j) {
                    const S p = std::exp(xr[j] - lse[static_cast<std::size_t>(i)]);
                    gr[j] += g * (p - (j == t ? S(1) : S(0)));
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// non-differentiable helpers

// Argmax with ties broken toward the lowest index, for deterministic decoding.
template <typename S>
int argmax_index(const Tensor<S>& v) {
    if (v.ndim() != 1 || v.dim(0) < 1) throw std::invalid_argument("argmax_index: expects 1-D");
    int best = 0;
    for (int i = 1; i < v.dim(0); ++i)
        if (v.at(i) > v.at(best)) best = i;
    return best;
}

template <typename S>
std::vector<S> log_softmax_values(const Tensor<S>& v) {
    if (v.ndim() != 1) throw std::invalid_argument("log_softmax_values: expects 1-D");
    const int n = v.dim(0);
    std::vector<S> out(static_cast<std::size_t>(n));
    S mx = v.at(0);
    for (int i = 1; i < n; ++i) mx = std::max(mx, v.at(i));
    S denom = 0;
    for (int i = 0; i < n; ++i) denom += std::exp(v.at(i) - mx);
    const S lse = mx + std::log(denom);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = v.at(i) - lse;
    return out;
}

}  // namespace pedro
