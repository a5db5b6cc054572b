#include "advst/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <memory>

#include "advst/kernels.hpp"

namespace advst::ops {

namespace detail {
bool corrupt_relu_backward = false;
}  // namespace detail

namespace {

// Parallel loop over disjoint output indices; stays serial for small n so the
// many tiny tensors in transform chains do not pay fork overhead.
template <class F>
inline void pfor(std::size_t n, F f) {
    if (n > 4096) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            f(static_cast<std::size_t>(i));
    } else {
        for (std::size_t i = 0; i < n; ++i) f(i);
    }
}

template <class T>
using Core = std::shared_ptr<GraphCore<T>>;

// The unique live graph among differentiable inputs; null when this op is a
// pure value computation.
template <class T>
Core<T> target_graph(const char* op, std::initializer_list<const Tensor<T>*> ins) {
    Core<T> g;
    for (const auto* t : ins) {
        if (!t->defined() || !t->requires_grad()) continue;
        auto cand = t->store()->graph.lock();
        if (!cand) continue;
        if (g && cand != g)
            throw ContractError(std::string(op) + ": inputs belong to two live graphs");
        g = cand;
    }
    return g;
}

template <class T>
bool diff_on(const Tensor<T>& t, const Core<T>& g) {
    return t.defined() && t.requires_grad() && t.store()->graph.lock() == g;
}

template <class T>
void bind_output(Tensor<T>& out, const Core<T>& g) {
    auto& s = *out.store();
    s.requires_grad = true;
    s.graph = g;
    s.grad.assign(s.values.size(), T(0));
}

template <class T>
void check_same_or_scalar(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1) return;
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
}

// Shared skeleton for binary elementwise ops with one-element broadcast.
// fwd(av,bv) -> value; da(av,bv,du) and db(av,bv,du) -> gradient summands.
template <class T, class Fwd, class Da, class Db>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                    Fwd fwd, Da da_of, Db db_of) {
    check_same_or_scalar(name, a, b);
    const bool asc = a.numel() == 1, bsc = b.numel() == 1;
    const auto& big = (asc && !bsc) ? b : a;
    Tensor<T> out = Tensor<T>::zeros(big.shape());
    const std::size_t n = out.numel();
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
    pfor(n, [&](std::size_t i) { ov[i] = fwd(av[asc ? 0 : i], bv[bsc ? 0 : i]); });

    auto g = target_graph<T>(name, {&a, &b});
    if (!g) return out;
    bind_output(out, g);
    const bool da = diff_on(a, g), db = diff_on(b, g);
    auto sa = a.store(), sb = b.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        const T* avd = sa->values.data();
        const T* bvd = sb->values.data();
        if (da) {
            T* ga = sa->grad.data();
            if (asc) {
                T acc = 0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += da_of(avd[0], bvd[bsc ? 0 : i], du[i]);
                ga[0] += acc;
            } else {
                pfor(n, [&](std::size_t i) {
                    ga[i] += da_of(avd[i], bvd[bsc ? 0 : i], du[i]);
                });
            }
        }
        if (db) {
            T* gb = sb->grad.data();
            if (bsc) {
                T acc = 0;
                for (std::size_t i = 0; i < n; ++i)
                    acc += db_of(avd[asc ? 0 : i], bvd[0], du[i]);
                gb[0] += acc;
            } else {
                pfor(n, [&](std::size_t i) {
                    gb[i] += db_of(avd[asc ? 0 : i], bvd[i], du[i]);
                });
            }
        }
    });
    return out;
}

// Shared skeleton for unary elementwise ops. fwd(v) -> value;
// dgrad(v, outv, du) -> gradient summand.
template <class T, class Fwd, class Dg>
Tensor<T> unary_op(const char* /*name*/, const Tensor<T>& a, Fwd fwd, Dg dgrad) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const std::size_t n = a.numel();
    const T* av = a.data();
    T* ov = out.data();
    pfor(n, [&](std::size_t i) { ov[i] = fwd(av[i]); });

    auto g = a.defined() && a.requires_grad() ? a.store()->graph.lock() : nullptr;
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        const T* avd = sa->values.data();
        const T* ovd = so->values.data();
        T* ga = sa->grad.data();
        pfor(n, [&](std::size_t i) { ga[i] += dgrad(avd[i], ovd[i], du[i]); });
    });
    return out;
}

// Splits a shape at `axis` into [outer, n, inner] extents.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};
inline AxisSplit split_axis(const std::vector<std::size_t>& shape, std::size_t axis) {
    AxisSplit s;
    s.n = shape[axis];
    for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; },
        [](T, T, T du) { return du; }, [](T, T, T du) { return du; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; },
        [](T, T, T du) { return du; }, [](T, T, T du) { return -du; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; },
        [](T, T y, T du) { return du * y; }, [](T x, T, T du) { return du * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    for (std::size_t i = 0; i < b.numel(); ++i)
        if (b.data()[i] == T(0)) throw DomainError("div: zero operand");
    return binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; },
        [](T, T y, T du) { return du / y; },
        [](T x, T y, T du) { return -du * x / (y * y); });
}

template <class T>
Tensor<T> max_elem(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "max_elem", a, b, [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y, T du) { return x >= y ? du : T(0); },
        [](T x, T y, T du) { return x >= y ? T(0) : du; });
}

template <class T>
Tensor<T> min_elem(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "min_elem", a, b, [](T x, T y) { return x <= y ? x : y; },
        [](T x, T y, T du) { return x <= y ? du : T(0); },
        [](T x, T y, T du) { return x <= y ? T(0) : du; });
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return unary_op<T>(
        "neg", a, [](T x) { return -x; }, [](T, T, T du) { return -du; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary_op<T>(
        "exp", a, [](T x) { return std::exp(x); },
        [](T, T o, T du) { return du * o; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] <= T(0)) throw DomainError("log: non-positive operand");
    return unary_op<T>(
        "log", a, [](T x) { return std::log(x); },
        [](T x, T, T du) { return du / x; });
}

template <class T>
Tensor<T> sin(const Tensor<T>& a) {
    return unary_op<T>(
        "sin", a, [](T x) { return std::sin(x); },
        [](T x, T, T du) { return du * std::cos(x); });
}

template <class T>
Tensor<T> cos(const Tensor<T>& a) {
    return unary_op<T>(
        "cos", a, [](T x) { return std::cos(x); },
        [](T x, T, T du) { return -du * std::sin(x); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_op<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T, T du) {
            T gz = x > T(0) ? du : T(0);
            return detail::corrupt_relu_backward ? -gz : gz;
        });
}

template <class T>
Tensor<T> power(const Tensor<T>& a, double p) {
    const bool integral = p == std::floor(p);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const T x = a.data()[i];
        if (!integral && x < T(0)) throw DomainError("power: negative base, real exponent");
        if (p < 0 && x == T(0)) throw DomainError("power: zero base, negative exponent");
    }
    const T tp = static_cast<T>(p);
    return unary_op<T>(
        "power", a, [tp](T x) { return std::pow(x, tp); },
        [tp](T x, T, T du) { return du * tp * std::pow(x, tp - T(1)); });
}

template <class T>
Tensor<T> adds(const Tensor<T>& a, double c) {
    const T tc = static_cast<T>(c);
    return unary_op<T>(
        "adds", a, [tc](T x) { return x + tc; }, [](T, T, T du) { return du; });
}

template <class T>
Tensor<T> muls(const Tensor<T>& a, double c) {
    const T tc = static_cast<T>(c);
    return unary_op<T>(
        "muls", a, [tc](T x) { return x * tc; }, [tc](T, T, T du) { return du * tc; });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& a, double lo, double hi) {
    if (lo > hi) throw ContractError("clamp: lo > hi");
    const T tlo = static_cast<T>(lo), thi = static_cast<T>(hi);
    return unary_op<T>(
        "clamp", a,
        [tlo, thi](T x) { return x < tlo ? tlo : (x > thi ? thi : x); },
        [tlo, thi](T x, T, T du) { return (x >= tlo && x <= thi) ? du : T(0); });
}

template <class T>
Tensor<T> wrap01(const Tensor<T>& a) {
    return unary_op<T>(
        "wrap01", a, [](T x) { return x - std::floor(x); },
        [](T, T, T du) { return du; });
}

// ---------------------------------------------------------------------------
// shape and layout
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != a.numel())
        throw ContractError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                            shape_str(shape));
    Tensor<T> out = Tensor<T>::from_values(std::move(shape), a.values());

    auto g = target_graph<T>("reshape", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* ga = sa->grad.data();
        pfor(so->grad.size(), [&](std::size_t i) { ga[i] += du[i]; });
    });
    return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) throw ContractError("transpose: rank-2 tensor required, got " +
                                           shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, m});
    const T* av = a.data();
    T* ov = out.data();
    pfor(m * n, [&](std::size_t i) {
        const std::size_t r = i / n, c = i % n;
        ov[c * m + r] = av[i];
    });

    auto g = target_graph<T>("transpose", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* ga = sa->grad.data();
        pfor(m * n, [&](std::size_t i) {
            const std::size_t r = i / n, c = i % n;
            ga[i] += du[c * m + r];
        });
    });
    return out;
}

template <class T>
Tensor<T> expand(const Tensor<T>& a, std::vector<std::size_t> shape) {
    const std::size_t rank = shape.size();
    if (a.rank() != rank)
        throw ContractError("expand: rank mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(shape));
    if (rank > 8) throw ContractError("expand: rank above 8 unsupported");
    for (std::size_t d = 0; d < rank; ++d)
        if (a.dim(d) != shape[d] && a.dim(d) != 1)
            throw ContractError("expand: cannot broadcast " + shape_str(a.shape()) +
                                " to " + shape_str(shape));

    // Row-major strides for both layouts; broadcast axes read position 0.
    std::vector<std::size_t> ostride(rank, 1), astride(rank, 1);
    for (std::size_t d = rank; d-- > 1;) ostride[d - 1] = ostride[d] * shape[d];
    for (std::size_t d = rank; d-- > 1;) astride[d - 1] = astride[d] * a.dim(d);
    std::vector<std::size_t> amap(rank);
    for (std::size_t d = 0; d < rank; ++d) amap[d] = a.dim(d) == 1 ? 0 : astride[d];

    Tensor<T> out = Tensor<T>::zeros(shape);
    const T* av = a.data();
    T* ov = out.data();
    const std::size_t n = out.numel();
    pfor(n, [&](std::size_t i) {
        std::size_t rem = i, ai = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            const std::size_t c = rem / ostride[d];
            rem -= c * ostride[d];
            ai += c * amap[d];
        }
        ov[i] = av[ai];
    });

    auto g = target_graph<T>("expand", {&a});
    if (!g) return out;
    bind_output(out, g);

    // Backward sums over the broadcast axes: one disjoint reduction per input
    // element, iterated with a mixed-radix counter over the expanded axes.
    std::vector<std::size_t> exp_axes, exp_sizes;
    for (std::size_t d = 0; d < rank; ++d)
        if (a.dim(d) == 1 && shape[d] != 1) {
            exp_axes.push_back(d);
            exp_sizes.push_back(shape[d]);
        }
    auto sa = a.store(), so = out.store();
    auto oshape = shape;
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* ga = sa->grad.data();
        pfor(sa->values.size(), [&](std::size_t i) {
            // Base output offset of this input element (expanded coords 0).
            std::size_t rem = i, base = 0;
            for (std::size_t d = 0; d < rank; ++d) {
                const std::size_t as = amap[d] ? astride[d] : 0;
                std::size_t c = 0;
                if (as) {
                    c = rem / astride[d];
                    rem -= c * astride[d];
                }
                base += c * ostride[d];
            }
            T acc = 0;
            std::array<std::size_t, 8> ctr{};
            bool more = true;
            while (more) {
                std::size_t off = base;
                for (std::size_t e = 0; e < exp_axes.size(); ++e)
                    off += ctr[e] * ostride[exp_axes[e]];
                acc += du[off];
                more = false;
                for (std::size_t e = exp_axes.size(); e-- > 0;) {
                    if (++ctr[e] < exp_sizes[e]) {
                        more = true;
                        break;
                    }
                    ctr[e] = 0;
                }
            }
            ga[i] += acc;
        });
    });
    return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const auto& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ContractError("concat: axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size())
            throw ContractError("concat: rank mismatch " + shape_str(p.shape()));
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && p.dim(d) != s0[d])
                throw ContractError("concat: shape mismatch " + shape_str(p.shape()) +
                                    " vs " + shape_str(s0));
        total += p.dim(axis);
    }
    auto oshape = s0;
    oshape[axis] = total;
    Tensor<T> out = Tensor<T>::zeros(oshape);
    const AxisSplit sp = split_axis(oshape, axis);

    std::size_t at = 0;
    std::vector<std::size_t> offsets(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) {
        offsets[p] = at;
        const std::size_t pn = parts[p].dim(axis);
        const T* src = parts[p].data();
        T* dst = out.data();
        pfor(sp.outer, [&](std::size_t o) {
            std::memcpy(dst + (o * sp.n + at) * sp.inner, src + o * pn * sp.inner,
                        pn * sp.inner * sizeof(T));
        });
        at += pn;
    }

    std::vector<const Tensor<T>*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    Core<T> g;
    for (const auto* t : ptrs) {
        if (!t->requires_grad()) continue;
        auto cand = t->store()->graph.lock();
        if (!cand) continue;
        if (g && cand != g) throw ContractError("concat: inputs belong to two live graphs");
        g = cand;
    }
    if (!g) return out;
    bind_output(out, g);
    std::vector<std::shared_ptr<TensorStorage<T>>> stores;
    std::vector<bool> want;
    for (const auto& p : parts) {
        stores.push_back(p.store());
        want.push_back(diff_on(p, g));
    }
    auto so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        for (std::size_t p = 0; p < stores.size(); ++p) {
            if (!want[p]) continue;
            const std::size_t pn = stores[p]->shape[axis];
            T* gp = stores[p]->grad.data();
            const std::size_t at0 = offsets[p];
            pfor(sp.outer, [&](std::size_t o) {
                const T* src = du + (o * sp.n + at0) * sp.inner;
                T* dst = gp + o * pn * sp.inner;
                for (std::size_t i = 0; i < pn * sp.inner; ++i) dst[i] += src[i];
            });
        }
    });
    return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.rank()) throw ContractError("slice: axis out of range");
    if (start + len > a.dim(axis))
        throw ContractError("slice: range [" + std::to_string(start) + "," +
                            std::to_string(start + len) + ") exceeds extent " +
                            std::to_string(a.dim(axis)));
    auto oshape = a.shape();
    oshape[axis] = len;
    Tensor<T> out = Tensor<T>::zeros(oshape);
    const AxisSplit sp = split_axis(a.shape(), axis);
    const T* av = a.data();
    T* ov = out.data();
    pfor(sp.outer, [&](std::size_t o) {
        std::memcpy(ov + o * len * sp.inner, av + (o * sp.n + start) * sp.inner,
                    len * sp.inner * sizeof(T));
    });

    auto g = target_graph<T>("slice", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* ga = sa->grad.data();
        pfor(sp.outer, [&](std::size_t o) {
            const T* src = du + o * len * sp.inner;
            T* dst = ga + (o * sp.n + start) * sp.inner;
            for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
        });
    });
    return out;
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& idx) {
    if (a.rank() != 2) throw ContractError("gather_rows: rank-2 tensor required");
    const std::size_t n = a.dim(0), d = a.dim(1);
    for (auto i : idx)
        if (i >= n) throw ContractError("gather_rows: index " + std::to_string(i) +
                                        " out of range " + std::to_string(n));
    Tensor<T> out = Tensor<T>::zeros({idx.size(), d});
    const T* av = a.data();
    T* ov = out.data();
    pfor(idx.size(), [&](std::size_t r) {
        std::memcpy(ov + r * d, av + idx[r] * d, d * sizeof(T));
    });

    auto g = target_graph<T>("gather_rows", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    auto ids = idx;
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* ga = sa->grad.data();
        // Serial scatter: repeated indices must accumulate.
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) ga[ids[r] * d + j] += du[r * d + j];
    });
    return out;
}

template <class T>
Tensor<T> gather_labels(const Tensor<T>& a, const std::vector<std::size_t>& labels) {
    if (a.rank() != 2) throw ContractError("gather_labels: rank-2 tensor required");
    const std::size_t b = a.dim(0), c = a.dim(1);
    if (labels.size() != b)
        throw ContractError("gather_labels: " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(b) + " rows");
    for (auto y : labels)
        if (y >= c) throw ContractError("gather_labels: label " + std::to_string(y) +
                                        " out of range " + std::to_string(c));
    Tensor<T> out = Tensor<T>::zeros({b});
    const T* av = a.data();
    T* ov = out.data();
    pfor(b, [&](std::size_t i) { ov[i] = av[i * c + labels[i]]; });

    auto g = target_graph<T>("gather_labels", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    auto ys = labels;
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* ga = sa->grad.data();
        pfor(b, [&](std::size_t i) { ga[i * c + ys[i]] += du[i]; });
    });
    return out;
}

template <class T>
Tensor<T> pad_reflect1(const Tensor<T>& a) {
    if (a.rank() != 4) throw ContractError("pad_reflect1: rank-4 tensor required");
    const std::size_t bt = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (h < 2 || w < 2) throw ContractError("pad_reflect1: spatial extents must be >= 2");
    const std::size_t oh = h + 2, ow = w + 2;
    Tensor<T> out = Tensor<T>::zeros({bt, c, oh, ow});
    const auto mirror = [](long long k, std::size_t n) -> std::size_t {
        if (k < 0) return static_cast<std::size_t>(-k);
        if (k >= static_cast<long long>(n)) return 2 * n - 2 - static_cast<std::size_t>(k);
        return static_cast<std::size_t>(k);
    };
    const T* av = a.data();
    T* ov = out.data();
    pfor(bt * c, [&](std::size_t pl) {
        const T* src = av + pl * h * w;
        T* dst = ov + pl * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
            const std::size_t si = mirror(static_cast<long long>(i) - 1, h);
            for (std::size_t j = 0; j < ow; ++j)
                dst[i * ow + j] = src[si * w + mirror(static_cast<long long>(j) - 1, w)];
        }
    });

    auto g = target_graph<T>("pad_reflect1", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* ga = sa->grad.data();
        pfor(bt * c, [&](std::size_t pl) {
            const T* src = du + pl * oh * ow;
            T* dst = ga + pl * h * w;
            for (std::size_t i = 0; i < oh; ++i) {
                const std::size_t si = mirror(static_cast<long long>(i) - 1, h);
                for (std::size_t j = 0; j < ow; ++j)
                    dst[si * w + mirror(static_cast<long long>(j) - 1, w)] += src[i * ow + j];
            }
        });
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T acc = 0;
    const T* av = a.data();
    for (std::size_t i = 0; i < a.numel(); ++i) acc += av[i];
    Tensor<T> out = Tensor<T>::scalar(acc);

    auto g = target_graph<T>("sum_all", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T du = so->grad[0];
        T* ga = sa->grad.data();
        pfor(sa->values.size(), [&](std::size_t i) { ga[i] += du; });
    });
    return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    if (a.numel() == 0) throw ContractError("mean_all: empty tensor");
    const T inv = T(1) / static_cast<T>(a.numel());
    T acc = 0;
    const T* av = a.data();
    for (std::size_t i = 0; i < a.numel(); ++i) acc += av[i];
    Tensor<T> out = Tensor<T>::scalar(acc * inv);

    auto g = target_graph<T>("mean_all", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T du = so->grad[0] * inv;
        T* ga = sa->grad.data();
        pfor(sa->values.size(), [&](std::size_t i) { ga[i] += du; });
    });
    return out;
}

namespace {

template <class T>
Tensor<T> axis_reduce(const char* name, const Tensor<T>& a, std::size_t axis, bool mean) {
    if (axis >= a.rank()) throw ContractError(std::string(name) + ": axis out of range");
    const AxisSplit sp = split_axis(a.shape(), axis);
    if (sp.n == 0) throw ContractError(std::string(name) + ": empty axis");
    std::vector<std::size_t> oshape;
    for (std::size_t d = 0; d < a.rank(); ++d)
        if (d != axis) oshape.push_back(a.dim(d));
    if (oshape.empty()) oshape.push_back(1);
    Tensor<T> out = Tensor<T>::zeros(oshape);
    const T scale = mean ? T(1) / static_cast<T>(sp.n) : T(1);
    const T* av = a.data();
    T* ov = out.data();
    pfor(sp.outer * sp.inner, [&](std::size_t oi) {
        const std::size_t o = oi / sp.inner, i = oi % sp.inner;
        T acc = 0;
        for (std::size_t k = 0; k < sp.n; ++k) acc += av[(o * sp.n + k) * sp.inner + i];
        ov[oi] = acc * scale;
    });

    auto g = target_graph<T>(name, {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* ga = sa->grad.data();
        pfor(sa->values.size(), [&](std::size_t ai) {
            const std::size_t i = ai % sp.inner;
            const std::size_t o = ai / (sp.inner * sp.n);
            ga[ai] += du[o * sp.inner + i] * scale;
        });
    });
    return out;
}

}  // namespace

template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
    return axis_reduce<T>("sum_axis", a, axis, false);
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis) {
    return axis_reduce<T>("mean_axis", a, axis, true);
}

// ---------------------------------------------------------------------------
// softmax family over the last axis
// ---------------------------------------------------------------------------

namespace {

template <class T>
void check_lastaxis(const char* name, const Tensor<T>& a) {
    if (a.rank() < 1 || a.shape().back() == 0)
        throw ContractError(std::string(name) + ": nonempty last axis required, got " +
                            shape_str(a.shape()));
}

}  // namespace

template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
    check_lastaxis("softmax", a);
    const std::size_t d = a.shape().back(), rows = a.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* av = a.data();
    T* ov = out.data();
    pfor(rows, [&](std::size_t r) {
        const T* x = av + r * d;
        T* y = ov + r * d;
        T m = x[0];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, x[j]);
        T z = 0;
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - m);
            z += y[j];
        }
        const T inv = T(1) / z;
        for (std::size_t j = 0; j < d; ++j) y[j] *= inv;
    });

    auto g = target_graph<T>("softmax", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        const T* y = so->values.data();
        T* ga = sa->grad.data();
        pfor(rows, [&](std::size_t r) {
            const T* yr = y + r * d;
            const T* dr = du + r * d;
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += dr[j] * yr[j];
            T* gr = ga + r * d;
            for (std::size_t j = 0; j < d; ++j) gr[j] += yr[j] * (dr[j] - dot);
        });
    });
    return out;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& a) {
    check_lastaxis("log_softmax", a);
    const std::size_t d = a.shape().back(), rows = a.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* av = a.data();
    T* ov = out.data();
    pfor(rows, [&](std::size_t r) {
        const T* x = av + r * d;
        T* y = ov + r * d;
        T m = x[0];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, x[j]);
        T z = 0;
        for (std::size_t j = 0; j < d; ++j) z += std::exp(x[j] - m);
        const T lse = m + std::log(z);
        for (std::size_t j = 0; j < d; ++j) y[j] = x[j] - lse;
    });

    auto g = target_graph<T>("log_softmax", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        const T* y = so->values.data();
        T* ga = sa->grad.data();
        pfor(rows, [&](std::size_t r) {
            const T* yr = y + r * d;
            const T* dr = du + r * d;
            T tot = 0;
            for (std::size_t j = 0; j < d; ++j) tot += dr[j];
            T* gr = ga + r * d;
            for (std::size_t j = 0; j < d; ++j) gr[j] += dr[j] - std::exp(yr[j]) * tot;
        });
    });
    return out;
}

template <class T>
Tensor<T> logsumexp(const Tensor<T>& a) {
    check_lastaxis("logsumexp", a);
    const std::size_t d = a.shape().back(), rows = a.numel() / d;
    std::vector<std::size_t> oshape(a.shape().begin(), a.shape().end() - 1);
    if (oshape.empty()) oshape.push_back(1);
    Tensor<T> out = Tensor<T>::zeros(oshape);
    const T* av = a.data();
    T* ov = out.data();
    pfor(rows, [&](std::size_t r) {
        const T* x = av + r * d;
        T m = x[0];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, x[j]);
        T z = 0;
        for (std::size_t j = 0; j < d; ++j) z += std::exp(x[j] - m);
        ov[r] = m + std::log(z);
    });

    auto g = target_graph<T>("logsumexp", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        const T* y = so->values.data();
        const T* x = sa->values.data();
        T* ga = sa->grad.data();
        pfor(rows, [&](std::size_t r) {
            const T* xr = x + r * d;
            T* gr = ga + r * d;
            for (std::size_t j = 0; j < d; ++j)
                gr[j] += du[r] * std::exp(xr[j] - y[r]);
        });
    });
    return out;
}

// ---------------------------------------------------------------------------
// matmul and network layers
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ContractError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    kernels::gemm(false, false, m, n, k, a.data(), k, b.data(), n, T(0), out.data(), n);

    auto g = target_graph<T>("matmul", {&a, &b});
    if (!g) return out;
    bind_output(out, g);
    const bool da = diff_on(a, g), db = diff_on(b, g);
    auto sa = a.store(), sb = b.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        if (da)
            kernels::gemm(false, true, m, k, n, du, n, sb->values.data(), n, T(1),
                          sa->grad.data(), k);
        if (db)
            kernels::gemm(true, false, k, n, m, sa->values.data(), k, du, n, T(1),
                          sb->grad.data(), n);
    });
    return out;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ContractError("conv2d: rank-4 input and kernel required, got " +
                            shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const std::size_t bt = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        throw ContractError("conv2d: kernel channels " + shape_str(w.shape()) +
                            " do not match input " + shape_str(x.shape()));
    if (h < kh || wd < kw)
        throw ContractError("conv2d: kernel larger than input for valid padding");
    if (b.numel() != cout)
        throw ContractError("conv2d: bias size " + std::to_string(b.numel()) +
                            " does not match " + std::to_string(cout) + " channels");
    const std::size_t oh = h - kh + 1, ow = wd - kw + 1;
    const std::size_t p = oh * ow, r = cin * kh * kw, n = bt * p;

    // Lower every image into one shared column matrix so a single GEMM does
    // the whole batch.
    auto col = std::make_shared<std::vector<T>>(r * n);
    for (std::size_t bi = 0; bi < bt; ++bi)
        kernels::im2col(x.data() + bi * cin * h * wd, cin, h, wd, kh, kw,
                        col->data() + bi * p, n);
    std::vector<T> omat(cout * n);
    kernels::gemm(false, false, cout, n, r, w.data(), r, col->data(), n, T(0),
                  omat.data(), n);

    Tensor<T> out = Tensor<T>::zeros({bt, cout, oh, ow});
    T* ov = out.data();
    const T* bv = b.data();
    pfor(bt * cout, [&](std::size_t i) {
        const std::size_t bi = i / cout, co = i % cout;
        const T* src = omat.data() + co * n + bi * p;
        T* dst = ov + (bi * cout + co) * p;
        const T bias = bv[co];
        for (std::size_t j = 0; j < p; ++j) dst[j] = src[j] + bias;
    });

    auto g = target_graph<T>("conv2d", {&x, &w, &b});
    if (!g) return out;
    bind_output(out, g);
    const bool dx = diff_on(x, g), dw = diff_on(w, g), db = diff_on(b, g);
    if (!dw) col.reset();  // saved activations only needed for the kernel gradient
    auto sx = x.store(), sw = w.store(), sb = b.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        // Regroup the output gradient as [cout, bt*p] to mirror the forward GEMM.
        std::vector<T> dom(cout * n);
        pfor(bt * cout, [&](std::size_t i) {
            const std::size_t bi = i / cout, co = i % cout;
            std::memcpy(dom.data() + co * n + bi * p, du + (bi * cout + co) * p,
                        p * sizeof(T));
        });
        if (db) {
            T* gb = sb->grad.data();
            pfor(cout, [&](std::size_t co) {
                T acc = 0;
                const T* src = dom.data() + co * n;
                for (std::size_t j = 0; j < n; ++j) acc += src[j];
                gb[co] += acc;
            });
        }
        if (dw)
            kernels::gemm(false, true, cout, r, n, dom.data(), n, col->data(), n, T(1),
                          sw->grad.data(), r);
        if (dx) {
            std::vector<T> dcol(r * n);
            kernels::gemm(true, false, r, n, cout, sw->values.data(), r, dom.data(), n,
                          T(0), dcol.data(), n);
            T* gx = sx->grad.data();
            for (std::size_t bi = 0; bi < bt; ++bi)
                kernels::col2im(dcol.data() + bi * p, n, cin, h, wd, kh, kw,
                                gx + bi * cin * h * wd);
        }
    });
    return out;
}

template <class T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
    if (x.rank() != 4) throw ContractError("maxpool2x2: rank-4 tensor required");
    const std::size_t bt = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2)
        throw ContractError("maxpool2x2: even spatial extents required, got " +
                            shape_str(x.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> out = Tensor<T>::zeros({bt, c, oh, ow});
    auto arg = std::make_shared<std::vector<unsigned char>>(out.numel());
    const T* xv = x.data();
    T* ov = out.data();
    unsigned char* am = arg->data();
    pfor(out.numel(), [&](std::size_t i) {
        const std::size_t oj = i % ow, oi = (i / ow) % oh, pl = i / (ow * oh);
        const T* base = xv + pl * h * w + (2 * oi) * w + 2 * oj;
        // Fixed scan order; strictly-greater keeps the first of equal values.
        T best = base[0];
        unsigned char code = 0;
        if (base[1] > best) { best = base[1]; code = 1; }
        if (base[w] > best) { best = base[w]; code = 2; }
        if (base[w + 1] > best) { best = base[w + 1]; code = 3; }
        ov[i] = best;
        am[i] = code;
    });

    auto g = target_graph<T>("maxpool2x2", {&x});
    if (!g) return out;
    bind_output(out, g);
    auto sx = x.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        const unsigned char* codes = arg->data();
        T* gx = sx->grad.data();
        pfor(so->grad.size(), [&](std::size_t i) {
            const std::size_t oj = i % ow, oi = (i / ow) % oh, pl = i / (ow * oh);
            const std::size_t off = pl * h * w + (2 * oi) * w + 2 * oj;
            const unsigned char code = codes[i];
            gx[off + (code & 1) + (code >> 1) * w] += du[i];
        });
    });
    return out;
}

template <class T>
Tensor<T> l2_normalize(const Tensor<T>& a, double eps) {
    check_lastaxis("l2_normalize", a);
    const std::size_t d = a.shape().back(), rows = a.numel() / d;
    const T teps = static_cast<T>(eps);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto norms = std::make_shared<std::vector<T>>(rows);
    const T* av = a.data();
    T* ov = out.data();
    pfor(rows, [&](std::size_t r) {
        const T* x = av + r * d;
        T ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += x[j] * x[j];
        const T nn = std::sqrt(ss);
        (*norms)[r] = nn;
        const T inv = T(1) / std::max(nn, teps);
        T* y = ov + r * d;
        for (std::size_t j = 0; j < d; ++j) y[j] = x[j] * inv;
    });

    auto g = target_graph<T>("l2_normalize", {&a});
    if (!g) return out;
    bind_output(out, g);
    auto sa = a.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        const T* y = so->values.data();
        T* ga = sa->grad.data();
        pfor(rows, [&](std::size_t r) {
            const T nn = (*norms)[r];
            const T* dr = du + r * d;
            T* gr = ga + r * d;
            if (nn > teps) {
                const T* yr = y + r * d;
                T dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += dr[j] * yr[j];
                const T inv = T(1) / nn;
                for (std::size_t j = 0; j < d; ++j)
                    gr[j] += (dr[j] - yr[j] * dot) * inv;
            } else {
                const T inv = T(1) / teps;
                for (std::size_t j = 0; j < d; ++j) gr[j] += dr[j] * inv;
            }
        });
    });
    return out;
}

// ---------------------------------------------------------------------------
// spatial sampling
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> affine_grid(const Tensor<T>& theta, std::size_t h, std::size_t w) {
    if (theta.rank() != 3 || theta.dim(1) != 2 || theta.dim(2) != 3)
        throw ContractError("affine_grid: theta must be [B,2,3], got " +
                            shape_str(theta.shape()));
    if (h < 2 || w < 2) throw ContractError("affine_grid: spatial extents must be >= 2");
    const std::size_t bt = theta.dim(0);
    Tensor<T> out = Tensor<T>::zeros({bt, h, w, 2});
    const T* tv = theta.data();
    T* ov = out.data();
    const T sx = T(2) / static_cast<T>(w - 1), sy = T(2) / static_cast<T>(h - 1);
    pfor(bt * h * w, [&](std::size_t i) {
        const std::size_t j = i % w, r = (i / w) % h, b = i / (w * h);
        const T xn = static_cast<T>(j) * sx - T(1);
        const T yn = static_cast<T>(r) * sy - T(1);
        const T* t = tv + b * 6;
        ov[i * 2 + 0] = t[0] * xn + t[1] * yn + t[2];
        ov[i * 2 + 1] = t[3] * xn + t[4] * yn + t[5];
    });

    auto g = target_graph<T>("affine_grid", {&theta});
    if (!g) return out;
    bind_output(out, g);
    auto st = theta.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* gt = st->grad.data();
        pfor(bt, [&](std::size_t b) {
            T acc[6] = {0, 0, 0, 0, 0, 0};
            for (std::size_t r = 0; r < h; ++r) {
                const T yn = static_cast<T>(r) * sy - T(1);
                for (std::size_t j = 0; j < w; ++j) {
                    const T xn = static_cast<T>(j) * sx - T(1);
                    const T* d = du + ((b * h + r) * w + j) * 2;
                    acc[0] += d[0] * xn;
                    acc[1] += d[0] * yn;
                    acc[2] += d[0];
                    acc[3] += d[1] * xn;
                    acc[4] += d[1] * yn;
                    acc[5] += d[1];
                }
            }
            for (int k = 0; k < 6; ++k) gt[b * 6 + k] += acc[k];
        });
    });
    return out;
}

template <class T>
Tensor<T> grid_sample(const Tensor<T>& x, const Tensor<T>& grid) {
    if (x.rank() != 4) throw ContractError("grid_sample: rank-4 input required");
    if (grid.rank() != 4 || grid.shape().back() != 2 || grid.dim(0) != x.dim(0))
        throw ContractError("grid_sample: grid must be [B,Hg,Wg,2] with matching batch, got " +
                            shape_str(grid.shape()));
    const std::size_t bt = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t hg = grid.dim(1), wg = grid.dim(2);
    Tensor<T> out = Tensor<T>::zeros({bt, c, hg, wg});
    const T* xv = x.data();
    const T* gv = grid.data();
    T* ov = out.data();
    const T hw = static_cast<T>(w - 1) / 2, hh = static_cast<T>(h - 1) / 2;

    // Captures h/w by value: the backward closure outlives this frame.
    const auto inb = [h, w](long long yy, long long xx) {
        return yy >= 0 && yy < static_cast<long long>(h) && xx >= 0 &&
               xx < static_cast<long long>(w);
    };

    pfor(bt * hg * wg, [&](std::size_t i) {
        const std::size_t jj = i % wg, ii = (i / wg) % hg, b = i / (wg * hg);
        const T px = (gv[i * 2 + 0] + T(1)) * hw;
        const T py = (gv[i * 2 + 1] + T(1)) * hh;
        const T fx = std::floor(px), fy = std::floor(py);
        const long long x0 = static_cast<long long>(fx), y0 = static_cast<long long>(fy);
        const T wx1 = px - fx, wx0 = T(1) - wx1;
        const T wy1 = py - fy, wy0 = T(1) - wy1;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* plane = xv + (b * c + ch) * h * w;
            const auto v = [&](long long yy, long long xx) -> T {
                return inb(yy, xx) ? plane[yy * w + xx] : T(0);
            };
            ov[((b * c + ch) * hg + ii) * wg + jj] =
                wy0 * (wx0 * v(y0, x0) + wx1 * v(y0, x0 + 1)) +
                wy1 * (wx0 * v(y0 + 1, x0) + wx1 * v(y0 + 1, x0 + 1));
        }
    });

    auto g = target_graph<T>("grid_sample", {&x, &grid});
    if (!g) return out;
    bind_output(out, g);
    const bool dx = diff_on(x, g), dg = diff_on(grid, g);
    auto sx = x.store(), sg = grid.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        const T* xvv = sx->values.data();
        const T* gvv = sg->values.data();
        T* gx = dx ? sx->grad.data() : nullptr;
        T* gg = dg ? sg->grad.data() : nullptr;
        // Parallel across images: the image-gradient scatter may collide
        // between grid points of one image, never between images.
        pfor(bt, [&](std::size_t b) {
            for (std::size_t ii = 0; ii < hg; ++ii) {
                for (std::size_t jj = 0; jj < wg; ++jj) {
                    const std::size_t gi = (b * hg + ii) * wg + jj;
                    const T px = (gvv[gi * 2 + 0] + T(1)) * hw;
                    const T py = (gvv[gi * 2 + 1] + T(1)) * hh;
                    const T fx = std::floor(px), fy = std::floor(py);
                    const long long x0 = static_cast<long long>(fx);
                    const long long y0 = static_cast<long long>(fy);
                    const T wx1 = px - fx, wx0 = T(1) - wx1;
                    const T wy1 = py - fy, wy0 = T(1) - wy1;
                    T dpx = 0, dpy = 0;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const T* plane = xvv + (b * c + ch) * h * w;
                        const T d = du[((b * c + ch) * hg + ii) * wg + jj];
                        const auto v = [&](long long yy, long long xx) -> T {
                            return inb(yy, xx) ? plane[yy * w + xx] : T(0);
                        };
                        if (gx) {
                            T* gplane = gx + (b * c + ch) * h * w;
                            const auto scatter = [&](long long yy, long long xx, T wt) {
                                if (inb(yy, xx)) gplane[yy * w + xx] += d * wt;
                            };
                            scatter(y0, x0, wy0 * wx0);
                            scatter(y0, x0 + 1, wy0 * wx1);
                            scatter(y0 + 1, x0, wy1 * wx0);
                            scatter(y0 + 1, x0 + 1, wy1 * wx1);
                        }
                        if (gg) {
                            dpx += d * (wy0 * (v(y0, x0 + 1) - v(y0, x0)) +
                                        wy1 * (v(y0 + 1, x0 + 1) - v(y0 + 1, x0)));
                            dpy += d * (wx0 * (v(y0 + 1, x0) - v(y0, x0)) +
                                        wx1 * (v(y0 + 1, x0 + 1) - v(y0, x0 + 1)));
                        }
                    }
                    if (gg) {
                        gg[gi * 2 + 0] += dpx * hw;
                        gg[gi * 2 + 1] += dpy * hh;
                    }
                }
            }
        });
    });
    return out;
}

// ---------------------------------------------------------------------------
// quantizing image ops (straight-through backward)
// ---------------------------------------------------------------------------

namespace {

template <class T>
void straight_through(const char* name, const Tensor<T>& x, Tensor<T>& out) {
    auto g = target_graph<T>(name, {&x});
    if (!g) return;
    bind_output(out, g);
    auto sx = x.store(), so = out.store();
    g->tape.push_back([=] {
        const T* du = so->grad.data();
        T* gx = sx->grad.data();
        pfor(sx->values.size(), [&](std::size_t i) { gx[i] += du[i]; });
    });
}

inline int to_level(double v) {
    const long r = std::lround(v * 255.0);
    return r < 0 ? 0 : (r > 255 ? 255 : static_cast<int>(r));
}

}  // namespace

template <class T>
Tensor<T> equalize_hist(const Tensor<T>& x) {
    if (x.rank() != 4) throw ContractError("equalize_hist: rank-4 tensor required");
    const std::size_t bt = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    pfor(bt * c, [&](std::size_t pl) {
        const T* src = xv + pl * hw;
        T* dst = ov + pl * hw;
        unsigned hist[256] = {};
        for (std::size_t i = 0; i < hw; ++i) ++hist[to_level(src[i])];
        unsigned cdf[256];
        unsigned run = 0;
        for (int k = 0; k < 256; ++k) {
            run += hist[k];
            cdf[k] = run;
        }
        unsigned cdf_min = 0;
        for (int k = 0; k < 256; ++k)
            if (hist[k]) {
                cdf_min = cdf[k];
                break;
            }
        const unsigned total = static_cast<unsigned>(hw);
        if (total == cdf_min) {  // constant plane: identity
            std::memcpy(dst, src, hw * sizeof(T));
            return;
        }
        T lut[256];
        const double denom = static_cast<double>(total - cdf_min);
        for (int k = 0; k < 256; ++k) {
            const long v = std::lround((cdf[k] - cdf_min) * 255.0 / denom);
            lut[k] = static_cast<T>((v < 0 ? 0 : (v > 255 ? 255 : v)) / 255.0);
        }
        for (std::size_t i = 0; i < hw; ++i) dst[i] = lut[to_level(src[i])];
    });
    straight_through("equalize_hist", x, out);
    return out;
}

template <class T>
Tensor<T> posterize_bits(const Tensor<T>& x, const std::vector<int>& bits) {
    if (x.rank() != 4) throw ContractError("posterize_bits: rank-4 tensor required");
    if (bits.size() != x.dim(0))
        throw ContractError("posterize_bits: " + std::to_string(bits.size()) +
                            " bit depths for batch of " + std::to_string(x.dim(0)));
    for (int bb : bits)
        if (bb < 1 || bb > 8)
            throw ContractError("posterize_bits: bit depth " + std::to_string(bb) +
                                " outside [1,8]");
    const std::size_t per = x.numel() / x.dim(0);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    pfor(x.numel(), [&](std::size_t i) {
        const int mask = (0xFF << (8 - bits[i / per])) & 0xFF;
        ov[i] = static_cast<T>((to_level(xv[i]) & mask) / 255.0);
    });
    straight_through("posterize_bits", x, out);
    return out;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define ADVST_OPS_INSTANTIATE(T)                                                          \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> max_elem<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> min_elem<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> neg<T>(const Tensor<T>&);                                          \
    template Tensor<T> exp<T>(const Tensor<T>&);                                          \
    template Tensor<T> log<T>(const Tensor<T>&);                                          \
    template Tensor<T> sin<T>(const Tensor<T>&);                                          \
    template Tensor<T> cos<T>(const Tensor<T>&);                                          \
    template Tensor<T> relu<T>(const Tensor<T>&);                                         \
    template Tensor<T> power<T>(const Tensor<T>&, double);                                \
    template Tensor<T> adds<T>(const Tensor<T>&, double);                                 \
    template Tensor<T> muls<T>(const Tensor<T>&, double);                                 \
    template Tensor<T> clamp<T>(const Tensor<T>&, double, double);                        \
    template Tensor<T> wrap01<T>(const Tensor<T>&);                                       \
    template Tensor<T> reshape<T>(const Tensor<T>&, std::vector<std::size_t>);            \
    template Tensor<T> transpose<T>(const Tensor<T>&);                                    \
    template Tensor<T> expand<T>(const Tensor<T>&, std::vector<std::size_t>);             \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);             \
    template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t); \
    template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<std::size_t>&); \
    template Tensor<T> gather_labels<T>(const Tensor<T>&,                                 \
                                        const std::vector<std::size_t>&);                 \
    template Tensor<T> pad_reflect1<T>(const Tensor<T>&);                                 \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                      \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                                     \
    template Tensor<T> sum_axis<T>(const Tensor<T>&, std::size_t);                        \
    template Tensor<T> mean_axis<T>(const Tensor<T>&, std::size_t);                       \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                      \
    template Tensor<T> log_softmax<T>(const Tensor<T>&);                                  \
    template Tensor<T> logsumexp<T>(const Tensor<T>&);                                    \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                     \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
    template Tensor<T> maxpool2x2<T>(const Tensor<T>&);                                   \
    template Tensor<T> l2_normalize<T>(const Tensor<T>&, double);                         \
    template Tensor<T> affine_grid<T>(const Tensor<T>&, std::size_t, std::size_t);        \
    template Tensor<T> grid_sample<T>(const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> equalize_hist<T>(const Tensor<T>&);                                \
    template Tensor<T> posterize_bits<T>(const Tensor<T>&, const std::vector<int>&);

ADVST_OPS_INSTANTIATE(float)
ADVST_OPS_INSTANTIATE(double)

}  // namespace advst::ops
