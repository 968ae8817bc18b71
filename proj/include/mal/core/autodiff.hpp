#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Every op appends one node holding its forward value and, when any input
// needs a gradient, a closure that pushes the node's gradient into its
// parents. Node order is a topological order, so backward() is one reverse
// sweep. A tape lives for one episode unroll.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mal/core/errors.hpp"
#include "mal/core/params.hpp"
#include "mal/core/tensor.hpp"

namespace mal::ad {

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor<T>& value() const { return tape->value(id); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool valid() const noexcept { return tape != nullptr; }
};

template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape&, std::uint32_t)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        Backward backward;
        const char* op = "leaf";
        int param = -1;
        bool needs_grad = false;
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(1024); }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), false, {}); }

    // Non-parameter leaf that still collects a gradient (used by gradient checks).
    Var<T> variable(Tensor<T> value) { return push("variable", std::move(value), grad_enabled_, {}); }

    // One node per parameter per tape; repeated use accumulates into it.
    Var<T> param(const ParameterStore<T>& store, std::size_t index) {
        if (param_nodes_.size() < store.size()) param_nodes_.resize(store.size(), -1);
        if (param_nodes_[index] >= 0) return Var<T>{this, static_cast<std::uint32_t>(param_nodes_[index])};
        Var<T> v = push("param", store[index], grad_enabled_, {});
        nodes_[v.id].param = static_cast<int>(index);
        param_nodes_[index] = static_cast<int>(v.id);
        return v;
    }

    Var<T> push(const char* op, Tensor<T> value, bool needs_grad, Backward backward) {
        if (!value.all_finite()) throw NumericFault(op, "non-finite forward value");
        Node n;
        n.value = std::move(value);
        n.op = op;
        n.needs_grad = needs_grad && grad_enabled_;
        if (n.needs_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    const Tensor<T>& value(std::uint32_t id) const { return nodes_[id].value; }
    bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
    const char* op(std::uint32_t id) const { return nodes_[id].op; }

    // Gradient accumulator, allocated on first touch.
    Tensor<T>& grad(std::uint32_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
        return n.grad;
    }
    bool has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }

    void backward(Var<T> loss) {
        MAL_REQUIRE(loss.tape == this, "backward: loss belongs to another tape");
        MAL_REQUIRE(nodes_[loss.id].value.size() == 1, "backward: loss must be a scalar");
        if (!nodes_[loss.id].needs_grad) return;
        grad(loss.id).fill(T(1));
        for (std::uint32_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty()) continue;
            if (!n.grad.all_finite()) throw NumericFault(n.op, "non-finite gradient");
            if (n.backward) n.backward(*this, i);
        }
    }

    // Parameter gradients after backward(); parameters never reached map to zero.
    GradientMap<T> parameter_gradients(const ParameterStore<T>& store) const {
        GradientMap<T> out = store.zeros_like();
        for (std::size_t p = 0; p < param_nodes_.size() && p < store.size(); ++p) {
            const int id = param_nodes_[p];
            if (id >= 0 && !nodes_[id].grad.empty()) out[p] = nodes_[id].grad;
        }
        return out;
    }

    void accumulate_parameter_gradients(const ParameterStore<T>& store, GradientMap<T>& into, T scale) const {
        for (std::size_t p = 0; p < param_nodes_.size() && p < store.size(); ++p) {
            const int id = param_nodes_[p];
            if (id < 0 || nodes_[id].grad.empty()) continue;
            const auto& g = nodes_[id].grad.data();
            auto& dst = into[p].data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
        }
    }

private:
    std::vector<Node> nodes_;
    std::vector<int> param_nodes_;
    bool grad_enabled_;
};

namespace detail {

template <typename T>
bool any_needs(std::initializer_list<Var<T>> vs) {
    for (const auto& v : vs)
        if (v.tape->needs_grad(v.id)) return true;
    return false;
}

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
    MAL_REQUIRE(a.tape == b.tape, "operands live on different tapes");
}

// c(m x n) += a(m x k) * b(k x n)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c(m x n) += a(m x k) * b(n x k)^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] += s;
        }
    }
}

// c(k x n) += a(m x k)^T * b(m x n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline std::size_t bcast_index(std::size_t i, std::size_t j, std::size_t r, std::size_t c) {
    return (r == 1 ? 0 : i) * c + (c == 1 ? 0 : j);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with row/column/scalar broadcasting.

template <typename T, typename F, typename DA, typename DB>
Var<T> broadcast_binary(const char* op, Var<T> a, Var<T> b, F f, DA da, DB db) {
    detail::check_same_tape(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    const std::size_t r = std::max(av.rows(), bv.rows());
    const std::size_t c = std::max(av.cols(), bv.cols());
    MAL_REQUIRE((av.rows() == r || av.rows() == 1) && (bv.rows() == r || bv.rows() == 1) &&
                    (av.cols() == c || av.cols() == 1) && (bv.cols() == c || bv.cols() == 1),
                std::string(op) + ": incompatible shapes");
    Tensor<T> out(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out(i, j) = f(av[detail::bcast_index(i, j, av.rows(), av.cols())],
                          bv[detail::bcast_index(i, j, bv.rows(), bv.cols())]);
    const bool needs = detail::any_needs<T>({a, b});
    return a.tape->push(op, std::move(out), needs,
                        [ia = a.id, ib = b.id, da, db](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            const auto& x = t.value(ia);
                            const auto& y = t.value(ib);
                            const auto& z = t.value(self);
                            const bool na = t.needs_grad(ia), nb = t.needs_grad(ib);
                            Tensor<T>* gx = na ? &t.grad(ia) : nullptr;
                            Tensor<T>* gy = nb ? &t.grad(ib) : nullptr;
                            for (std::size_t i = 0; i < g.rows(); ++i)
                                for (std::size_t j = 0; j < g.cols(); ++j) {
                                    const std::size_t xi = detail::bcast_index(i, j, x.rows(), x.cols());
                                    const std::size_t yi = detail::bcast_index(i, j, y.rows(), y.cols());
                                    const T gz = g(i, j);
                                    if (gx) (*gx)[xi] += gz * da(x[xi], y[yi], z(i, j));
                                    if (gy) (*gy)[yi] += gz * db(x[xi], y[yi], z(i, j));
                                }
                        });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    return broadcast_binary(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    return broadcast_binary(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    return broadcast_binary(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
        [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
    return broadcast_binary(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T, T y, T z) { return -z / y; });
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops.

template <typename T, typename F, typename D>
Var<T> unary(const char* op, Var<T> a, F f, D d) {
    const auto& av = a.value();
    Tensor<T> out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return a.tape->push(op, std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id, d](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            const auto& x = t.value(ia);
                            const auto& z = t.value(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(x[i], z[i]);
                        });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
    return unary("scale", a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
    return unary("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(Var<T> a) { return scale(a, T(-1)); }

template <typename T>
Var<T> square(Var<T> a) {
    return unary("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
    return unary(
        "sigmoid", a,
        [](T x) {
            if (x >= 0) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T z) { return z * (T(1) - z); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
    return unary("tanh", a, [](T x) { return std::tanh(x); }, [](T, T z) { return T(1) - z * z; });
}

template <typename T>
Var<T> exp(Var<T> a) {
    return unary("exp", a, [](T x) { return std::exp(x); }, [](T, T z) { return z; });
}

template <typename T>
Var<T> log(Var<T> a) {
    return unary("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

// log(max(x, floor)); zero gradient where the floor is active.
template <typename T>
Var<T> log_clipped(Var<T> a, T floor) {
    return unary(
        "log_clipped", a, [floor](T x) { return std::log(std::max(x, floor)); },
        [floor](T x, T) { return x > floor ? T(1) / x : T(0); });
}

template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
    return unary(
        "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
        [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
    return unary(
        "leaky_relu", a, [slope](T x) { return x > 0 ? x : slope * x; },
        [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename T>
Var<T> sum(Var<T> a) {
    const auto& av = a.value();
    T s = 0;
    for (T v : av.data()) s += v;
    return a.tape->push("sum", Tensor<T>::scalar(s), a.tape->needs_grad(a.id),
                        [ia = a.id](Tape<T>& t, std::uint32_t self) {
                            const T g = t.grad(self)[0];
                            for (auto& v : t.grad(ia).data()) v += g;
                        });
}

template <typename T>
Var<T> mean(Var<T> a) {
    MAL_REQUIRE(a.value().size() > 0, "mean of empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// (m x n) -> (m x 1)
template <typename T>
Var<T> sum_cols(Var<T> a) {
    const auto& av = a.value();
    Tensor<T> out(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
        T s = 0;
        for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j);
        out(i, 0) = s;
    }
    return a.tape->push("sum_cols", std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t i = 0; i < gx.rows(); ++i)
                                for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g(i, 0);
                        });
}

// (m x n) -> (1 x n)
template <typename T>
Var<T> sum_rows(Var<T> a) {
    const auto& av = a.value();
    Tensor<T> out(1, av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
    return a.tape->push("sum_rows", std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t i = 0; i < gx.rows(); ++i)
                                for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g(0, j);
                        });
}

// Row-wise dot products of equally shaped (or row-broadcast) operands: (m x n) -> (m x 1).
template <typename T>
Var<T> row_dot(Var<T> a, Var<T> b) {
    return sum_cols(mul(a, b));
}

// ---------------------------------------------------------------------------
// Matrix products.

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    MAL_REQUIRE(av.cols() == bv.rows(), "matmul: inner dimensions differ");
    Tensor<T> out(av.rows(), bv.cols());
    detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), av.rows(), av.cols(), bv.cols());
    return a.tape->push("matmul", std::move(out), detail::any_needs<T>({a, b}),
                        [ia = a.id, ib = b.id](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            const auto& x = t.value(ia);
                            const auto& y = t.value(ib);
                            if (t.needs_grad(ia))
                                detail::gemm_nt(g.data().data(), y.data().data(), t.grad(ia).data().data(),
                                                g.rows(), g.cols(), x.cols());
                            if (t.needs_grad(ib))
                                detail::gemm_tn(x.data().data(), g.data().data(), t.grad(ib).data().data(),
                                                x.rows(), x.cols(), g.cols());
                        });
}

// a (m x k) times b^T where b is (n x k).
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    MAL_REQUIRE(av.cols() == bv.cols(), "matmul_nt: inner dimensions differ");
    Tensor<T> out(av.rows(), bv.rows());
    detail::gemm_nt(av.data().data(), bv.data().data(), out.data().data(), av.rows(), av.cols(), bv.rows());
    return a.tape->push("matmul_nt", std::move(out), detail::any_needs<T>({a, b}),
                        [ia = a.id, ib = b.id](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            const auto& x = t.value(ia);
                            const auto& y = t.value(ib);
                            if (t.needs_grad(ia))
                                detail::gemm_nn(g.data().data(), y.data().data(), t.grad(ia).data().data(),
                                                g.rows(), g.cols(), y.cols());
                            if (t.needs_grad(ib))
                                detail::gemm_tn(g.data().data(), x.data().data(), t.grad(ib).data().data(),
                                                g.rows(), g.cols(), x.cols());
                        });
}

// ---------------------------------------------------------------------------
// Shape plumbing.

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    MAL_REQUIRE(!parts.empty(), "concat_cols: no operands");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    bool needs = false;
    for (const auto& p : parts) {
        MAL_REQUIRE(p.rows() == r, "concat_cols: row counts differ");
        MAL_REQUIRE(p.tape == parts[0].tape, "concat_cols: operands on different tapes");
        c += p.cols();
        needs = needs || p.tape->needs_grad(p.id);
    }
    Tensor<T> out(r, c);
    std::size_t off = 0;
    std::vector<std::uint32_t> ids;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        for (std::size_t i = 0; i < r; ++i)
            std::copy(pv.row_span(i).begin(), pv.row_span(i).end(), out.row_span(i).begin() + off);
        off += pv.cols();
        ids.push_back(p.id);
    }
    return parts[0].tape->push("concat_cols", std::move(out), needs,
                               [ids = std::move(ids)](Tape<T>& t, std::uint32_t self) {
                                   const auto& g = t.grad(self);
                                   std::size_t off = 0;
                                   for (auto id : ids) {
                                       const std::size_t pc = t.value(id).cols();
                                       if (t.needs_grad(id)) {
                                           auto& gp = t.grad(id);
                                           for (std::size_t i = 0; i < g.rows(); ++i)
                                               for (std::size_t j = 0; j < pc; ++j) gp(i, j) += g(i, off + j);
                                       }
                                       off += pc;
                                   }
                               });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    MAL_REQUIRE(!parts.empty(), "concat_rows: no operands");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    bool needs = false;
    for (const auto& p : parts) {
        MAL_REQUIRE(p.cols() == c, "concat_rows: column counts differ");
        r += p.rows();
        needs = needs || p.tape->needs_grad(p.id);
    }
    Tensor<T> out(r, c);
    std::vector<std::uint32_t> ids;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + off * c);
        off += pv.rows();
        ids.push_back(p.id);
    }
    return parts[0].tape->push("concat_rows", std::move(out), needs,
                               [ids = std::move(ids)](Tape<T>& t, std::uint32_t self) {
                                   const auto& g = t.grad(self);
                                   std::size_t off = 0;
                                   for (auto id : ids) {
                                       const std::size_t n = t.value(id).size();
                                       if (t.needs_grad(id)) {
                                           auto& gp = t.grad(id);
                                           for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                                       }
                                       off += n;
                                   }
                               });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t len) {
    const auto& av = a.value();
    MAL_REQUIRE(start + len <= av.cols(), "slice_cols: out of range");
    Tensor<T> out(av.rows(), len);
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < len; ++j) out(i, j) = av(i, start + j);
    return a.tape->push("slice_cols", std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id, start](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t i = 0; i < g.rows(); ++i)
                                for (std::size_t j = 0; j < g.cols(); ++j) gx(i, start + j) += g(i, j);
                        });
}

template <typename T>
Var<T> transpose(Var<T> a) {
    const auto& av = a.value();
    Tensor<T> out(av.cols(), av.rows());
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
    return a.tape->push("transpose", std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t i = 0; i < gx.rows(); ++i)
                                for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g(j, i);
                        });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> rows) {
    const auto& av = a.value();
    Tensor<T> out(rows.size(), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        MAL_REQUIRE(rows[i] < av.rows(), "gather_rows: index out of range");
        std::copy(av.row_span(rows[i]).begin(), av.row_span(rows[i]).end(), out.row_span(i).begin());
    }
    return a.tape->push("gather_rows", std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id, rows = std::move(rows)](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t i = 0; i < rows.size(); ++i)
                                for (std::size_t j = 0; j < g.cols(); ++j) gx(rows[i], j) += g(i, j);
                        });
}

// a[rows][:, cols]
template <typename T>
Var<T> gather_block(Var<T> a, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
    const auto& av = a.value();
    Tensor<T> out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            MAL_REQUIRE(rows[i] < av.rows() && cols[j] < av.cols(), "gather_block: index out of range");
            out(i, j) = av(rows[i], cols[j]);
        }
    return a.tape->push(
        "gather_block", std::move(out), a.tape->needs_grad(a.id),
        [ia = a.id, rows = std::move(rows), cols = std::move(cols)](Tape<T>& t, std::uint32_t self) {
            const auto& g = t.grad(self);
            auto& gx = t.grad(ia);
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::size_t j = 0; j < cols.size(); ++j) gx(rows[i], cols[j]) += g(i, j);
        });
}

// Picks a[r_k, c_k] for each (r_k, c_k) into an (n x 1) column.
template <typename T>
Var<T> pick(Var<T> a, std::vector<std::pair<std::size_t, std::size_t>> at) {
    const auto& av = a.value();
    Tensor<T> out(at.size(), 1);
    for (std::size_t k = 0; k < at.size(); ++k) {
        MAL_REQUIRE(at[k].first < av.rows() && at[k].second < av.cols(), "pick: index out of range");
        out(k, 0) = av(at[k].first, at[k].second);
    }
    return a.tape->push("pick", std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id, at = std::move(at)](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t k = 0; k < at.size(); ++k) gx(at[k].first, at[k].second) += g(k, 0);
                        });
}

// ---------------------------------------------------------------------------
// Softmax family (row-wise).

template <typename T>
Var<T> softmax_rows(Var<T> a) {
    const auto& av = a.value();
    Tensor<T> out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        auto x = av.row_span(i);
        auto y = out.row_span(i);
        const T mx = *std::max_element(x.begin(), x.end());
        T s = 0;
        for (std::size_t j = 0; j < x.size(); ++j) s += (y[j] = std::exp(x[j] - mx));
        for (auto& v : y) v /= s;
    }
    return a.tape->push("softmax", std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            const auto& y = t.value(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t i = 0; i < y.rows(); ++i) {
                                T dot = 0;
                                for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                                for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
                            }
                        });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
    const auto& av = a.value();
    Tensor<T> out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        auto x = av.row_span(i);
        const T mx = *std::max_element(x.begin(), x.end());
        T s = 0;
        for (T v : x) s += std::exp(v - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < x.size(); ++j) out(i, j) = x[j] - lse;
    }
    return a.tape->push("log_softmax", std::move(out), a.tape->needs_grad(a.id),
                        [ia = a.id](Tape<T>& t, std::uint32_t self) {
                            const auto& g = t.grad(self);
                            const auto& y = t.value(self);
                            auto& gx = t.grad(ia);
                            for (std::size_t i = 0; i < y.rows(); ++i) {
                                T gs = 0;
                                for (std::size_t j = 0; j < y.cols(); ++j) gs += g(i, j);
                                for (std::size_t j = 0; j < y.cols(); ++j)
                                    gx(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
                            }
                        });
}

// Mean softmax cross-entropy against integer targets, one per row.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<std::size_t>& targets) {
    MAL_REQUIRE(targets.size() == logits.rows(), "softmax_cross_entropy: one target per row");
    std::vector<std::pair<std::size_t, std::size_t>> at;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        MAL_REQUIRE(targets[i] < logits.cols(), "softmax_cross_entropy: target out of range");
        at.emplace_back(i, targets[i]);
    }
    return neg(mean(pick(log_softmax_rows(logits), std::move(at))));
}

// ---------------------------------------------------------------------------
// Weight-normalized transforms. Row o of the effective weight is g_o v_o / |v_o|.

namespace detail {

template <typename T>
std::vector<T> row_norms(const Tensor<T>& v, const char* op) {
    std::vector<T> n(v.rows());
    for (std::size_t o = 0; o < v.rows(); ++o) {
        T s = 0;
        for (T x : v.row_span(o)) s += x * x;
        n[o] = std::sqrt(s);
        if (!(n[o] >= T(1e-12))) throw NumericFault(op, "weight-norm direction row has vanishing norm");
    }
    return n;
}

template <typename T>
Tensor<T> effective_weight(const Tensor<T>& v, const Tensor<T>& g, const std::vector<T>& norms) {
    Tensor<T> w(v.rows(), v.cols());
    for (std::size_t o = 0; o < v.rows(); ++o) {
        const T s = g[o] / norms[o];
        for (std::size_t i = 0; i < v.cols(); ++i) w(o, i) = s * v(o, i);
    }
    return w;
}

// Chain dW (grad of effective weight) back into v and g.
template <typename T>
void weight_norm_backward(Tape<T>& t, std::uint32_t iv, std::uint32_t ig, const Tensor<T>& dw,
                          const std::vector<T>& norms) {
    const auto& v = t.value(iv);
    const auto& g = t.value(ig);
    Tensor<T>* gv = t.needs_grad(iv) ? &t.grad(iv) : nullptr;
    Tensor<T>* gg = t.needs_grad(ig) ? &t.grad(ig) : nullptr;
    for (std::size_t o = 0; o < v.rows(); ++o) {
        T dot = 0;
        for (std::size_t i = 0; i < v.cols(); ++i) dot += dw(o, i) * v(o, i);
        const T n = norms[o];
        if (gg) (*gg)[o] += dot / n;
        if (gv) {
            const T a = g[o] / n;
            const T b = dot / (n * n);
            for (std::size_t i = 0; i < v.cols(); ++i) (*gv)(o, i) += a * (dw(o, i) - b * v(o, i));
        }
    }
}

}  // namespace detail

// x (B x in), v (out x in), g (1 x out), b (1 x out) -> (B x out)
template <typename T>
Var<T> wn_linear(Var<T> x, Var<T> v, Var<T> g, Var<T> b) {
    const auto& xv = x.value();
    const auto& vv = v.value();
    MAL_REQUIRE(vv.cols() == xv.cols(), "wn_linear: v rows must match input dimension");
    MAL_REQUIRE(g.value().size() == vv.rows() && b.value().size() == vv.rows(),
                "wn_linear: gain/bias must match output dimension");
    auto norms = detail::row_norms(vv, "wn_linear");
    Tensor<T> w = detail::effective_weight(vv, g.value(), norms);
    Tensor<T> out(xv.rows(), vv.rows());
    for (std::size_t r = 0; r < xv.rows(); ++r)
        std::copy(b.value().data().begin(), b.value().data().end(), out.row_span(r).begin());
    detail::gemm_nt(xv.data().data(), w.data().data(), out.data().data(), xv.rows(), xv.cols(), vv.rows());
    return x.tape->push(
        "wn_linear", std::move(out), detail::any_needs<T>({x, v, g, b}),
        [ix = x.id, iv = v.id, ig = g.id, ib = b.id, w = std::move(w), norms = std::move(norms)](
            Tape<T>& t, std::uint32_t self) {
            const auto& dy = t.grad(self);
            const auto& xv = t.value(ix);
            if (t.needs_grad(ix))
                detail::gemm_nn(dy.data().data(), w.data().data(), t.grad(ix).data().data(), dy.rows(),
                                dy.cols(), w.cols());
            if (t.needs_grad(ib)) {
                auto& gb = t.grad(ib);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t o = 0; o < dy.cols(); ++o) gb[o] += dy(r, o);
            }
            if (t.needs_grad(iv) || t.needs_grad(ig)) {
                Tensor<T> dw(w.rows(), w.cols());
                detail::gemm_tn(dy.data().data(), xv.data().data(), dw.data().data(), dy.rows(), dy.cols(),
                                xv.cols());
                detail::weight_norm_backward(t, iv, ig, dw, norms);
            }
        });
}

// Row-wise layer normalization: gain * (x - mean) / sqrt(var + eps) + bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    MAL_REQUIRE(eps > T(0), "layer_norm: eps must be positive");
    const auto& xv = x.value();
    const std::size_t n = xv.cols();
    MAL_REQUIRE(gain.value().size() == n && bias.value().size() == n, "layer_norm: gain/bias size mismatch");
    Tensor<T> xhat(xv.rows(), n);
    std::vector<T> inv_std(xv.rows());
    Tensor<T> out(xv.rows(), n);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        T mu = 0;
        for (T v : xv.row_span(r)) mu += v;
        mu /= static_cast<T>(n);
        T var = 0;
        for (T v : xv.row_span(r)) var += (v - mu) * (v - mu);
        var /= static_cast<T>(n);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat(r, j) = (xv(r, j) - mu) * inv_std[r];
            out(r, j) = gain.value()[j] * xhat(r, j) + bias.value()[j];
        }
    }
    return x.tape->push(
        "layer_norm", std::move(out), detail::any_needs<T>({x, gain, bias}),
        [ix = x.id, ig = gain.id, ib = bias.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            Tape<T>& t, std::uint32_t self) {
            const auto& dy = t.grad(self);
            const auto& gv = t.value(ig);
            const std::size_t n = dy.cols();
            for (std::size_t r = 0; r < dy.rows(); ++r) {
                if (t.needs_grad(ig)) {
                    auto& gg = t.grad(ig);
                    for (std::size_t j = 0; j < n; ++j) gg[j] += dy(r, j) * xhat(r, j);
                }
                if (t.needs_grad(ib)) {
                    auto& gb = t.grad(ib);
                    for (std::size_t j = 0; j < n; ++j) gb[j] += dy(r, j);
                }
                if (t.needs_grad(ix)) {
                    T m1 = 0, m2 = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const T d = dy(r, j) * gv[j];
                        m1 += d;
                        m2 += d * xhat(r, j);
                    }
                    m1 /= static_cast<T>(n);
                    m2 /= static_cast<T>(n);
                    auto& gx = t.grad(ix);
                    for (std::size_t j = 0; j < n; ++j)
                        gx(r, j) += inv_std[r] * (dy(r, j) * gv[j] - m1 - xhat(r, j) * m2);
                }
            }
        });
}

// Fused LSTM gate nonlinearity. pre is (B x 4H) laid out [input | forget | output | candidate];
// returns (B x 2H) laid out [h | c].
template <typename T>
Var<T> lstm_pointwise(Var<T> pre, Var<T> c_prev) {
    const auto& p = pre.value();
    const auto& cp = c_prev.value();
    const std::size_t H = cp.cols();
    MAL_REQUIRE(p.cols() == 4 * H && p.rows() == cp.rows(), "lstm_cell: pre-activation/state dimension mismatch");
    auto sig = [](T x) { return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); };
    Tensor<T> out(p.rows(), 2 * H);
    Tensor<T> gates(p.rows(), 4 * H);  // activated i, f, o, u
    Tensor<T> tanh_c(p.rows(), H);
    for (std::size_t r = 0; r < p.rows(); ++r)
        for (std::size_t j = 0; j < H; ++j) {
            const T i = sig(p(r, j)), f = sig(p(r, H + j)), o = sig(p(r, 2 * H + j)), u = std::tanh(p(r, 3 * H + j));
            const T c = f * cp(r, j) + i * u;
            const T tc = std::tanh(c);
            gates(r, j) = i;
            gates(r, H + j) = f;
            gates(r, 2 * H + j) = o;
            gates(r, 3 * H + j) = u;
            tanh_c(r, j) = tc;
            out(r, j) = o * tc;
            out(r, H + j) = c;
        }
    return pre.tape->push(
        "lstm_cell", std::move(out), detail::any_needs<T>({pre, c_prev}),
        [ip = pre.id, ic = c_prev.id, gates = std::move(gates), tanh_c = std::move(tanh_c), H](
            Tape<T>& t, std::uint32_t self) {
            const auto& g = t.grad(self);
            const auto& cp = t.value(ic);
            Tensor<T>* gp = t.needs_grad(ip) ? &t.grad(ip) : nullptr;
            Tensor<T>* gc = t.needs_grad(ic) ? &t.grad(ic) : nullptr;
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t j = 0; j < H; ++j) {
                    const T i = gates(r, j), f = gates(r, H + j), o = gates(r, 2 * H + j), u = gates(r, 3 * H + j);
                    const T tc = tanh_c(r, j);
                    const T dh = g(r, j);
                    const T dc = g(r, H + j) + dh * o * (T(1) - tc * tc);
                    if (gc) (*gc)(r, j) += dc * f;
                    if (gp) {
                        (*gp)(r, j) += dc * u * i * (T(1) - i);
                        (*gp)(r, H + j) += dc * cp(r, j) * f * (T(1) - f);
                        (*gp)(r, 2 * H + j) += dh * tc * o * (T(1) - o);
                        (*gp)(r, 3 * H + j) += dc * i * (T(1) - u * u);
                    }
                }
        });
}

// ---------------------------------------------------------------------------
// Cosine similarity. Norms are floored at eps; a floored norm is treated as a constant.

template <typename T>
Var<T> cosine_matrix(Var<T> a, Var<T> b, T eps) {
    detail::check_same_tape(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    MAL_REQUIRE(av.cols() == bv.cols(), "cosine_sim: dimensions differ");
    auto norms = [eps](const Tensor<T>& m) {
        std::vector<T> n(m.rows());
        std::vector<bool> floored(m.rows());
        for (std::size_t r = 0; r < m.rows(); ++r) {
            T s = 0;
            for (T x : m.row_span(r)) s += x * x;
            const T nn = std::sqrt(s);
            floored[r] = !(nn > eps);
            n[r] = floored[r] ? eps : nn;
        }
        return std::pair{n, floored};
    };
    auto [na, fa] = norms(av);
    auto [nb, fb] = norms(bv);
    Tensor<T> out(av.rows(), bv.rows());
    detail::gemm_nt(av.data().data(), bv.data().data(), out.data().data(), av.rows(), av.cols(), bv.rows());
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < bv.rows(); ++j) out(i, j) /= na[i] * nb[j];
    return a.tape->push(
        "cosine_sim", std::move(out), detail::any_needs<T>({a, b}),
        [ia = a.id, ib = b.id, na = std::move(na), nb = std::move(nb), fa = std::move(fa), fb = std::move(fb)](
            Tape<T>& t, std::uint32_t self) {
            const auto& g = t.grad(self);
            const auto& c = t.value(self);
            const auto& av = t.value(ia);
            const auto& bv = t.value(ib);
            const std::size_t d = av.cols();
            if (t.needs_grad(ia)) {
                auto& ga = t.grad(ia);
                for (std::size_t i = 0; i < av.rows(); ++i)
                    for (std::size_t j = 0; j < bv.rows(); ++j) {
                        const T gij = g(i, j);
                        if (gij == T(0)) continue;
                        const T s = gij / (na[i] * nb[j]);
                        const T self_term = fa[i] ? T(0) : gij * c(i, j) / (na[i] * na[i]);
                        for (std::size_t k = 0; k < d; ++k) ga(i, k) += s * bv(j, k) - self_term * av(i, k);
                    }
            }
            if (t.needs_grad(ib)) {
                auto& gb = t.grad(ib);
                for (std::size_t i = 0; i < av.rows(); ++i)
                    for (std::size_t j = 0; j < bv.rows(); ++j) {
                        const T gij = g(i, j);
                        if (gij == T(0)) continue;
                        const T s = gij / (na[i] * nb[j]);
                        const T self_term = fb[j] ? T(0) : gij * c(i, j) / (nb[j] * nb[j]);
                        for (std::size_t k = 0; k < d; ++k) gb(j, k) += s * av(i, k) - self_term * bv(j, k);
                    }
            }
        });
}

// Plain-value cosine with the same eps rule.
template <typename T>
T cosine_sim(std::span<const T> a, std::span<const T> b, T eps) {
    MAL_REQUIRE(a.size() == b.size(), "cosine_sim: dimensions differ");
    T dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
}

// For each query row q, [max, mean, min] of sim(q, p) over peers p (excluding p == q).
// Rows with no peers get zeros.
template <typename T>
Var<T> masked_row_stats(Var<T> sim, const std::vector<std::size_t>& queries, const std::vector<std::size_t>& peers) {
    const auto& s = sim.value();
    Tensor<T> out(queries.size(), 3);
    // argmax, argmin, and peer count per query row
    std::vector<std::size_t> amax(queries.size()), amin(queries.size()), count(queries.size(), 0);
    for (std::size_t k = 0; k < queries.size(); ++k) {
        const std::size_t q = queries[k];
        MAL_REQUIRE(q < s.rows(), "item_item_features: query out of range");
        T mx = -std::numeric_limits<T>::infinity(), mn = std::numeric_limits<T>::infinity(), total = 0;
        for (std::size_t p : peers) {
            if (p == q) continue;
            const T v = s(q, p);
            if (v > mx) { mx = v; amax[k] = p; }
            if (v < mn) { mn = v; amin[k] = p; }
            total += v;
            ++count[k];
        }
        if (count[k] > 0) {
            out(k, 0) = mx;
            out(k, 1) = total / static_cast<T>(count[k]);
            out(k, 2) = mn;
        }
    }
    return sim.tape->push(
        "item_item_features", std::move(out), sim.tape->needs_grad(sim.id),
        [is = sim.id, queries, peers, amax = std::move(amax), amin = std::move(amin), count = std::move(count)](
            Tape<T>& t, std::uint32_t self) {
            const auto& g = t.grad(self);
            auto& gs = t.grad(is);
            for (std::size_t k = 0; k < queries.size(); ++k) {
                if (count[k] == 0) continue;
                const std::size_t q = queries[k];
                gs(q, amax[k]) += g(k, 0);
                gs(q, amin[k]) += g(k, 2);
                const T gm = g(k, 1) / static_cast<T>(count[k]);
                for (std::size_t p : peers)
                    if (p != q) gs(q, p) += gm;
            }
        });
}

// ---------------------------------------------------------------------------
// Convolution with weight-normalized filters. Input rows are images stored
// channel-major (C x H x W flattened); output rows likewise.

struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;

    std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::size_t patch() const { return in_channels * kernel * kernel; }
};

namespace detail {

template <typename T>
Tensor<T> im2col(std::span<const T> img, const ConvGeometry& geo) {
    const std::size_t oh = geo.out_height(), ow = geo.out_width();
    Tensor<T> cols(geo.patch(), oh * ow);
    for (std::size_t c = 0; c < geo.in_channels; ++c)
        for (std::size_t ky = 0; ky < geo.kernel; ++ky)
            for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
                const std::size_t row = (c * geo.kernel + ky) * geo.kernel + kx;
                for (std::size_t y = 0; y < oh; ++y) {
                    const long iy = static_cast<long>(y * geo.stride + ky) - static_cast<long>(geo.pad);
                    for (std::size_t x = 0; x < ow; ++x) {
                        const long ix = static_cast<long>(x * geo.stride + kx) - static_cast<long>(geo.pad);
                        if (iy >= 0 && ix >= 0 && iy < static_cast<long>(geo.height) &&
                            ix < static_cast<long>(geo.width))
                            cols(row, y * ow + x) = img[(c * geo.height + iy) * geo.width + ix];
                    }
                }
            }
    return cols;
}

template <typename T>
void col2im_add(const Tensor<T>& cols, std::span<T> img, const ConvGeometry& geo) {
    const std::size_t oh = geo.out_height(), ow = geo.out_width();
    for (std::size_t c = 0; c < geo.in_channels; ++c)
        for (std::size_t ky = 0; ky < geo.kernel; ++ky)
            for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
                const std::size_t row = (c * geo.kernel + ky) * geo.kernel + kx;
                for (std::size_t y = 0; y < oh; ++y) {
                    const long iy = static_cast<long>(y * geo.stride + ky) - static_cast<long>(geo.pad);
                    for (std::size_t x = 0; x < ow; ++x) {
                        const long ix = static_cast<long>(x * geo.stride + kx) - static_cast<long>(geo.pad);
                        if (iy >= 0 && ix >= 0 && iy < static_cast<long>(geo.height) &&
                            ix < static_cast<long>(geo.width))
                            img[(c * geo.height + iy) * geo.width + ix] += cols(row, y * ow + x);
                    }
                }
            }
}

}  // namespace detail

// x (B x C*H*W), v (F x C*k*k), g (1 x F), b (1 x F) -> (B x F*Ho*Wo)
template <typename T>
Var<T> wn_conv2d(Var<T> x, Var<T> v, Var<T> g, Var<T> b, ConvGeometry geo) {
    const auto& xv = x.value();
    const auto& vv = v.value();
    MAL_REQUIRE(xv.cols() == geo.in_channels * geo.height * geo.width, "conv2d: input size mismatch");
    MAL_REQUIRE(vv.cols() == geo.patch(), "conv2d: filter size mismatch");
    const std::size_t F = vv.rows();
    const std::size_t P = geo.out_height() * geo.out_width();
    auto norms = detail::row_norms(vv, "conv2d");
    Tensor<T> w = detail::effective_weight(vv, g.value(), norms);
    Tensor<T> out(xv.rows(), F * P);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        Tensor<T> cols = detail::im2col(xv.row_span(r), geo);
        T* o = out.data().data() + r * F * P;
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t p = 0; p < P; ++p) o[f * P + p] = b.value()[f];
        detail::gemm_nn(w.data().data(), cols.data().data(), o, F, geo.patch(), P);
    }
    return x.tape->push(
        "conv2d", std::move(out), detail::any_needs<T>({x, v, g, b}),
        [ix = x.id, iv = v.id, ig = g.id, ib = b.id, geo, w = std::move(w), norms = std::move(norms), F, P](
            Tape<T>& t, std::uint32_t self) {
            const auto& dy = t.grad(self);
            const auto& xv = t.value(ix);
            const bool need_w = t.needs_grad(iv) || t.needs_grad(ig);
            Tensor<T> dw(w.rows(), w.cols());
            for (std::size_t r = 0; r < xv.rows(); ++r) {
                const T* d = dy.data().data() + r * F * P;
                if (t.needs_grad(ib)) {
                    auto& gb = t.grad(ib);
                    for (std::size_t f = 0; f < F; ++f)
                        for (std::size_t p = 0; p < P; ++p) gb[f] += d[f * P + p];
                }
                if (need_w) {
                    Tensor<T> cols = detail::im2col(xv.row_span(r), geo);
                    detail::gemm_nt(d, cols.data().data(), dw.data().data(), F, P, geo.patch());
                }
                if (t.needs_grad(ix)) {
                    Tensor<T> dcols(geo.patch(), P);
                    detail::gemm_tn(w.data().data(), d, dcols.data().data(), F, geo.patch(), P);
                    detail::col2im_add(dcols, t.grad(ix).row_span(r), geo);
                }
            }
            if (need_w) detail::weight_norm_backward(t, iv, ig, dw, norms);
        });
}

}  // namespace mal::ad
