#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "advst/rng.hpp"
#include "advst/tensor.hpp"

// Central finite-difference gradient checking. The error measure is
// max over coordinates of |analytic - central| / max(1, |central|).

namespace advst {

template <class T>
struct FdResult {
    double max_rel_err = 0.0;
    std::size_t worst_coord = 0;
};

// `build` runs the forward pass and returns the scalar loss; it is called
// once per evaluation and must read the current values of `x`. The harness
// adopts `x` into a fresh graph for the analytic pass, then re-evaluates
// pure forwards for the differences. `coords` limits checking to a random
// subset for large tensors (0 = all coordinates).
template <class T>
FdResult<T> fd_check(const std::function<Tensor<T>(Graph<T>&)>& build, Tensor<T>& x,
                     T h, std::size_t coords = 0, std::uint64_t coord_seed = 17) {
    std::vector<T> analytic;
    {
        Graph<T> g;
        g.adopt(x);
        Tensor<T> loss = build(g);
        g.backward(loss);
        analytic.assign(x.grad().begin(), x.grad().end());
    }

    std::vector<std::size_t> which;
    if (coords == 0 || coords >= x.numel()) {
        which.resize(x.numel());
        for (std::size_t i = 0; i < which.size(); ++i) which[i] = i;
    } else {
        // Sample distinct coordinates with a partial shuffle.
        which.resize(x.numel());
        for (std::size_t i = 0; i < which.size(); ++i) which[i] = i;
        Rng rng(coord_seed);
        for (std::size_t i = 0; i < coords; ++i) {
            const std::size_t j = i + rng.uniform_int(which.size() - i);
            std::swap(which[i], which[j]);
        }
        which.resize(coords);
    }

    const auto value_at = [&]() -> T {
        Graph<T> g;
        Tensor<T> loss = build(g);
        return loss.item();
    };

    FdResult<T> res;
    T* xv = x.data();
    for (const std::size_t i : which) {
        const T keep = xv[i];
        xv[i] = keep + h;
        const T fp = value_at();
        xv[i] = keep - h;
        const T fm = value_at();
        xv[i] = keep;
        if (!std::isfinite(static_cast<double>(fp)) ||
            !std::isfinite(static_cast<double>(fm)))
            throw DomainError("fd_check: non-finite evaluation at coordinate " +
                              std::to_string(i));
        const double central = static_cast<double>(fp - fm) / (2.0 * static_cast<double>(h));
        const double err = std::abs(static_cast<double>(analytic[i]) - central) /
                           std::max(1.0, std::abs(central));
        if (err > res.max_rel_err) {
            res.max_rel_err = err;
            res.worst_coord = i;
        }
    }
    return res;
}

// Fill a tensor with uniform values in [lo, hi).
template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace advst
