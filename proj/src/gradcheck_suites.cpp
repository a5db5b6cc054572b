#include "advst/gradcheck_suites.hpp"

#include <cmath>

#include "advst/gradcheck.hpp"
#include "advst/losses.hpp"
#include "advst/model.hpp"
#include "advst/ops.hpp"
#include "advst/transforms.hpp"

namespace advst {

namespace {

using D = double;
using Tn = Tensor<D>;
namespace o = ops;

constexpr double kTol = 1e-4;
constexpr double kGridTol = 1e-3;
constexpr double kH = 1e-5;

// Contract a tensor against a fixed random weighting so the scalar loss
// exercises every output coordinate of the op under test.
Tn weighted_sum(const Tn& t, std::uint64_t seed) {
    Tn u = Tn::zeros(t.shape());
    Rng rng(seed);
    for (auto& v : u.values()) v = rng.uniform(-1.0, 1.0);
    return o::sum_all(o::mul(t, u));
}

Tn uniform(std::vector<std::size_t> shape, std::uint64_t seed, double lo, double hi) {
    Tn t = Tn::zeros(std::move(shape));
    Rng rng(seed);
    fill_uniform(t, rng, lo, hi);
    return t;
}

struct Suite {
    std::string name;
    double tol;
    // Returns max relative error.
    std::function<double()> run;
};

double check1(const std::function<Tn(Graph<D>&, Tn&)>& f, Tn& x, double h = kH) {
    auto res = fd_check<D>([&](Graph<D>& g) { return f(g, x); }, x, h);
    return res.max_rel_err;
}

// Straight-through ops: the input gradient must equal the upstream gradient
// exactly; report 0 on success and 1 on any deviation.
double check_straight_through(const std::function<Tn(const Tn&)>& op, Tn& x) {
    Graph<D> g;
    g.adopt(x);
    Tn out = op(x);
    Tn loss = weighted_sum(out, 99);
    g.backward(loss);
    // Recover the upstream gradient: d loss / d out is the weighting itself.
    Tn u = Tn::zeros(x.shape());
    Rng rng(99);
    for (auto& v : u.values()) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (x.grad()[i] != u.values()[i]) return 1.0;
    return 0.0;
}

std::vector<Suite> primitive_suites() {
    std::vector<Suite> s;
    const auto add = [&](std::string name, double tol, std::function<double()> run) {
        s.push_back({std::move(name), tol, std::move(run)});
    };

    // -- binary elementwise, including the one-element broadcast path --
    add("add", kTol, [] {
        Tn a = uniform({3, 4}, 1, -1, 1), b = uniform({3, 4}, 2, -1, 1);
        double e = check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::add(x, b), 3); }, a);
        return std::max(e, check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::add(a, x), 4); }, b));
    });
    add("sub", kTol, [] {
        Tn a = uniform({3, 4}, 5, -1, 1), b = uniform({1}, 6, -1, 1);
        double e = check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::sub(x, b), 7); }, a);
        return std::max(e, check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::sub(a, x), 8); }, b));
    });
    add("mul", kTol, [] {
        Tn a = uniform({3, 4}, 9, -1, 1), b = uniform({3, 4}, 10, -1, 1);
        double e = check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::mul(x, b), 11); }, a);
        return std::max(e, check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::mul(a, x), 12); }, b));
    });
    add("div", kTol, [] {
        Tn a = uniform({3, 4}, 13, -1, 1), b = uniform({3, 4}, 14, 0.5, 2.0);
        double e = check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::div(x, b), 15); }, a);
        return std::max(e, check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::div(a, x), 16); }, b));
    });
    add("max_elem", kTol, [] {
        Tn a = uniform({4, 4}, 17, -1, 1), b = uniform({4, 4}, 18, -1, 1);
        // Keep every pair separated so differences stay on one branch.
        for (std::size_t i = 0; i < a.numel(); ++i)
            if (std::abs(a.values()[i] - b.values()[i]) < 0.05) a.values()[i] += 0.1;
        double e = check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::max_elem(x, b), 19); }, a);
        return std::max(e, check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::max_elem(a, x), 20); }, b));
    });
    add("min_elem", kTol, [] {
        Tn a = uniform({4, 4}, 21, -1, 1), b = uniform({4, 4}, 22, -1, 1);
        for (std::size_t i = 0; i < a.numel(); ++i)
            if (std::abs(a.values()[i] - b.values()[i]) < 0.05) a.values()[i] += 0.1;
        return check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::min_elem(x, b), 23); }, a);
    });

    // -- unary elementwise --
    add("neg", kTol, [] {
        Tn a = uniform({5}, 24, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::neg(x), 25); }, a);
    });
    add("exp", kTol, [] {
        Tn a = uniform({3, 3}, 26, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::exp(x), 27); }, a);
    });
    add("log", kTol, [] {
        Tn a = uniform({3, 3}, 28, 0.2, 3.0);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::log(x), 29); }, a);
    });
    add("sin", kTol, [] {
        Tn a = uniform({7}, 30, -2, 2);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::sin(x), 31); }, a);
    });
    add("cos", kTol, [] {
        Tn a = uniform({7}, 32, -2, 2);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::cos(x), 33); }, a);
    });
    add("relu", kTol, [] {
        Tn a = uniform({4, 4}, 34, -1, 1);
        for (auto& v : a.values())  // keep differences off the kink
            if (std::abs(v) < 0.01) v += 0.05;
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::relu(x), 35); }, a);
    });
    add("power", kTol, [] {
        Tn a = uniform({3, 3}, 36, 0.3, 2.0);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::power(x, 1.7), 37); }, a);
    });
    add("adds", kTol, [] {
        Tn a = uniform({6}, 38, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::adds(x, 0.37), 39); }, a);
    });
    add("muls", kTol, [] {
        Tn a = uniform({6}, 40, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::muls(x, -2.4), 41); }, a);
    });
    add("clamp", kTol, [] {
        Tn a = uniform({10}, 42, -1.5, 1.5);
        for (auto& v : a.values()) {  // keep differences off the interval edges
            if (std::abs(v - 1.0) < 0.01) v += 0.05;
            if (std::abs(v + 1.0) < 0.01) v += 0.05;
        }
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::clamp(x, -1, 1), 43); }, a);
    });
    add("wrap01", kTol, [] {
        Tn a = uniform({8}, 44, -2, 2);
        for (auto& v : a.values())  // keep differences off the wrap points
            if (std::abs(v - std::round(v)) < 0.01) v += 0.05;
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::wrap01(x), 45); }, a);
    });

    // -- shape/layout --
    add("reshape", kTol, [] {
        Tn a = uniform({3, 4}, 46, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::reshape(x, {2, 6}), 47); }, a);
    });
    add("transpose", kTol, [] {
        Tn a = uniform({3, 5}, 48, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::transpose(x), 49); }, a);
    });
    add("expand", kTol, [] {
        Tn a = uniform({3, 1, 2, 1}, 50, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::expand(x, {3, 4, 2, 5}), 51); }, a);
    });
    add("concat", kTol, [] {
        Tn a = uniform({2, 3}, 52, -1, 1), b = uniform({2, 2}, 53, -1, 1);
        double e = check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::concat<D>({x, b}, 1), 54); }, a);
        return std::max(e, check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::concat<D>({a, x}, 1), 55); }, b));
    });
    add("slice", kTol, [] {
        Tn a = uniform({4, 6}, 56, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::slice(x, 1, 2, 3), 57); }, a);
    });
    add("gather_rows", kTol, [] {
        Tn a = uniform({5, 3}, 58, -1, 1);
        const std::vector<std::size_t> idx = {4, 0, 0, 2};  // repeats must accumulate
        return check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::gather_rows(x, idx), 59); }, a);
    });
    add("gather_labels", kTol, [] {
        Tn a = uniform({4, 5}, 60, -1, 1);
        const std::vector<std::size_t> y = {1, 0, 4, 2};
        return check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::gather_labels(x, y), 61); }, a);
    });
    add("pad_reflect1", kTol, [] {
        Tn a = uniform({2, 2, 3, 4}, 62, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::pad_reflect1(x), 63); }, a);
    });

    // -- reductions --
    add("sum_all", kTol, [] {
        Tn a = uniform({3, 4}, 64, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return o::sum_all(x); }, a);
    });
    add("mean_all", kTol, [] {
        Tn a = uniform({3, 4}, 65, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return o::mean_all(x); }, a);
    });
    add("sum_axis", kTol, [] {
        Tn a = uniform({3, 4, 2}, 66, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::sum_axis(x, 1), 67); }, a);
    });
    add("mean_axis", kTol, [] {
        Tn a = uniform({3, 4, 2}, 68, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::mean_axis(x, 0), 69); }, a);
    });

    // -- softmax family --
    add("softmax", kTol, [] {
        Tn a = uniform({4, 6}, 70, -2, 2);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::softmax(x), 71); }, a);
    });
    add("log_softmax", kTol, [] {
        Tn a = uniform({4, 6}, 72, -2, 2);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::log_softmax(x), 73); }, a);
    });
    add("logsumexp", kTol, [] {
        Tn a = uniform({5, 7}, 74, -2, 2);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::logsumexp(x), 75); }, a);
    });

    // -- network layers --
    add("matmul", kTol, [] {
        Tn a = uniform({3, 4}, 76, -1, 1), b = uniform({4, 5}, 77, -1, 1);
        double e = check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::matmul(x, b), 78); }, a);
        return std::max(e, check1([&](Graph<D>&, Tn& x) { return weighted_sum(o::matmul(a, x), 79); }, b));
    });
    add("conv2d", kTol, [] {
        Tn x = uniform({2, 3, 6, 5}, 80, -1, 1);
        Tn w = uniform({4, 3, 3, 3}, 81, -0.5, 0.5);
        Tn b = uniform({4}, 82, -0.5, 0.5);
        double e = check1([&](Graph<D>&, Tn& t) { return weighted_sum(o::conv2d(t, w, b), 83); }, x);
        e = std::max(e, check1([&](Graph<D>&, Tn& t) { return weighted_sum(o::conv2d(x, t, b), 84); }, w));
        return std::max(e, check1([&](Graph<D>&, Tn& t) { return weighted_sum(o::conv2d(x, w, t), 85); }, b));
    });
    add("maxpool2x2", kTol, [] {
        Tn x = uniform({2, 2, 4, 6}, 86, -1, 1);
        // Separate window entries so the argmax never flips under the step.
        for (std::size_t i = 0; i < x.numel(); ++i)
            x.values()[i] += 1e-3 * static_cast<double>(i % 7);
        return check1([](Graph<D>&, Tn& t) { return weighted_sum(o::maxpool2x2(t), 87); }, x);
    });
    add("l2_normalize", kTol, [] {
        Tn a = uniform({4, 6}, 88, -1, 1);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::l2_normalize(x), 89); }, a);
    });

    // -- spatial sampling --
    add("affine_grid", kTol, [] {
        Tn th = uniform({2, 2, 3}, 90, -0.5, 0.5);
        return check1([](Graph<D>&, Tn& x) { return weighted_sum(o::affine_grid(x, 5, 6), 91); }, th);
    });
    add("grid_sample_image", kGridTol, [] {
        Tn x = uniform({2, 2, 5, 5}, 92, 0, 1);
        Tn grid = uniform({2, 4, 4, 2}, 93, -0.9, 0.9);
        // Push sample points away from the pixel lattice so differences stay
        // inside one bilinear cell.
        for (auto& v : grid.values()) {
            const double px = (v + 1.0) * 2.0;  // (n-1)/2 with n=5
            if (std::abs(px - std::round(px)) < 5e-3) v += 0.01;
        }
        return check1([&](Graph<D>&, Tn& t) { return weighted_sum(o::grid_sample(t, grid), 94); }, x);
    });
    add("grid_sample_grid", kGridTol, [] {
        Tn x = uniform({2, 2, 5, 5}, 95, 0, 1);
        Tn grid = uniform({2, 4, 4, 2}, 96, -0.9, 0.9);
        for (auto& v : grid.values()) {
            const double px = (v + 1.0) * 2.0;
            if (std::abs(px - std::round(px)) < 5e-3) v += 0.01;
        }
        return check1([&](Graph<D>&, Tn& t) { return weighted_sum(o::grid_sample(x, t), 97); },
                      grid, 1e-4);
    });

    // -- straight-through quantizers --
    add("equalize_hist", 0.0, [] {
        Tn x = uniform({2, 3, 6, 6}, 98, 0, 1);
        return check_straight_through([](const Tn& t) { return o::equalize_hist(t); }, x);
    });
    add("posterize_bits", 0.0, [] {
        Tn x = uniform({2, 3, 6, 6}, 99, 0, 1);
        const std::vector<int> bits = {3, 7};
        return check_straight_through(
            [&](const Tn& t) { return o::posterize_bits(t, bits); }, x);
    });

    return s;
}

// ---------------------------------------------------------------------------
// Transform suites. Finite differences need smooth neighborhoods, so inputs
// and parameters are crafted to keep every discrete choice (argmax channel,
// hue sector, bilinear cell, clamp edge) fixed under the difference steps.

// Image whose pixels keep clear channel separation and stay away from hue
// sector boundaries and the [0,1] edges.
Tn hsv_safe_image(std::size_t bt, std::size_t h, std::size_t w, std::uint64_t seed) {
    Tn x = Tn::zeros({bt, 3, h, w});
    Rng rng(seed);
    const std::size_t hw = h * w;
    double* dv = x.data();
    static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                    {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (std::size_t n = 0; n < bt; ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            const double v1 = rng.uniform(0.10, 0.55);
            const double v2 = v1 + rng.uniform(0.09, 0.17);
            const double v3 = v2 + rng.uniform(0.09, 0.17);
            const double vals[3] = {v1, v2, v3};
            const int* pm = perms[rng.uniform_int(6)];
            for (int c = 0; c < 3; ++c)
                dv[(n * 3 + static_cast<std::size_t>(pm[c])) * hw + i] = vals[c];
        }
    return x;
}

// Smallest distance from any affine sample location to the pixel lattice.
double affine_lattice_dist(const double th[6], std::size_t h, std::size_t w) {
    double md = 1e9;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double xn = 2.0 * static_cast<double>(j) / (static_cast<double>(w) - 1.0) - 1.0;
            const double yn = 2.0 * static_cast<double>(i) / (static_cast<double>(h) - 1.0) - 1.0;
            const double gx = th[0] * xn + th[1] * yn + th[2];
            const double gy = th[3] * xn + th[4] * yn + th[5];
            const double px = (gx + 1.0) * 0.5 * (static_cast<double>(w) - 1.0);
            const double py = (gy + 1.0) * 0.5 * (static_cast<double>(h) - 1.0);
            md = std::min(md, std::abs(px - std::round(px)));
            md = std::min(md, std::abs(py - std::round(py)));
        }
    return md;
}

void require_lattice_safe(const double th[6], std::size_t h, std::size_t w) {
    if (affine_lattice_dist(th, h, w) < 1e-3)
        throw StateError("transform gradcheck: sampling grid too close to the pixel lattice");
}

double safe_rotate_angle(std::size_t h, std::size_t w) {
    for (double a = 0.30; a < 0.45; a += 0.0037) {
        const double th[6] = {std::cos(a), std::sin(a), 0, -std::sin(a), std::cos(a), 0};
        if (affine_lattice_dist(th, h, w) >= 2e-3) return a;
    }
    throw StateError("transform gradcheck: no lattice-safe rotation angle found");
}

double safe_scale_factor(std::size_t h, std::size_t w) {
    for (double s = 1.37; s < 1.6; s += 0.0041) {
        const double th[6] = {1.0 / s, 0, 0, 0, 1.0 / s, 0};
        if (affine_lattice_dist(th, h, w) >= 2e-3) return s;
    }
    throw StateError("transform gradcheck: no lattice-safe scale factor found");
}

std::vector<Suite> transform_suites() {
    std::vector<Suite> s;
    const auto add = [&](std::string name, double tol, std::function<double()> run) {
        s.push_back({std::move(name), tol, std::move(run)});
    };
    const FrozenAttrs fz{};

    add("tf_hsv_params", kTol, [fz] {
        Tn img = hsv_safe_image(2, 6, 6, 201);
        Tn p = Tn::from_values({3}, {0.0073, -0.031, 0.024});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::HSV, t, fz, img), 202);
            },
            p);
    });
    add("tf_hsv_image", kTol, [fz] {
        Tn img = hsv_safe_image(2, 6, 6, 203);
        Tn p = Tn::from_values({3}, {0.0073, -0.031, 0.024});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::HSV, p, fz, t), 204);
            },
            img);
    });
    add("tf_contrast_params", kTol, [fz] {
        Tn img = uniform({2, 3, 6, 6}, 205, 0.15, 0.85);
        Tn p = Tn::from_values({1}, {0.8});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Contrast, t, fz, img), 206);
            },
            p);
    });
    add("tf_contrast_image", kTol, [fz] {
        Tn img = uniform({2, 3, 6, 6}, 207, 0.15, 0.85);
        Tn p = Tn::from_values({1}, {0.8});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Contrast, p, fz, t), 208);
            },
            img);
    });
    add("tf_invert_params", kTol, [fz] {
        Tn img = uniform({2, 3, 6, 6}, 209, 0.1, 0.9);
        Tn p = Tn::from_values({1}, {0.5});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Invert, t, fz, img), 210);
            },
            p);
    });
    add("tf_invert_image", kTol, [fz] {
        Tn img = uniform({2, 3, 6, 6}, 211, 0.1, 0.9);
        Tn p = Tn::from_values({1}, {0.5});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Invert, p, fz, t), 212);
            },
            img);
    });
    add("tf_sharpness_params", kTol, [fz] {
        Tn img = uniform({2, 3, 6, 6}, 213, 0.35, 0.65);
        Tn p = Tn::from_values({1}, {0.6});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Sharpness, t, fz, img), 214);
            },
            p);
    });
    add("tf_sharpness_image", kTol, [fz] {
        Tn img = uniform({2, 3, 6, 6}, 215, 0.35, 0.65);
        Tn p = Tn::from_values({1}, {0.6});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Sharpness, p, fz, t), 216);
            },
            img);
    });
    add("tf_solarize_params", kTol, [fz] {
        Tn img = uniform({2, 3, 6, 6}, 217, 0.1, 0.9);
        Tn p = Tn::from_values({1}, {0.23});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Solarize, t, fz, img), 218);
            },
            p);
    });
    add("tf_solarize_image", kTol, [fz] {
        Tn img = uniform({2, 3, 6, 6}, 219, 0.1, 0.9);
        Tn p = Tn::from_values({1}, {0.23});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Solarize, p, fz, t), 220);
            },
            img);
    });
    add("tf_shear_params", kGridTol, [fz] {
        const double sx = 0.17, sy = 0.11;
        const double th[6] = {1, sx, 0, sy, 1, 0};
        require_lattice_safe(th, 8, 8);
        Tn img = uniform({2, 3, 8, 8}, 221, 0.1, 0.9);
        Tn p = Tn::from_values({2}, {sx, sy});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Shear, t, fz, img), 222);
            },
            p);
    });
    add("tf_translate_params", kGridTol, [fz] {
        const double tx = 0.137, ty = 0.083;
        const double th[6] = {1, 0, -2 * tx, 0, 1, -2 * ty};
        require_lattice_safe(th, 8, 8);
        Tn img = uniform({2, 3, 8, 8}, 223, 0.1, 0.9);
        Tn p = Tn::from_values({2}, {tx, ty});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Translate, t, fz, img), 224);
            },
            p);
    });
    add("tf_rotate_params", kGridTol, [fz] {
        const double a = safe_rotate_angle(8, 8);
        Tn img = uniform({2, 3, 8, 8}, 225, 0.1, 0.9);
        Tn p = Tn::from_values({1}, {a});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Rotate, t, fz, img), 226);
            },
            p);
    });
    add("tf_rotate_image", kGridTol, [fz] {
        const double a = safe_rotate_angle(8, 8);
        Tn img = uniform({2, 3, 8, 8}, 227, 0.1, 0.9);
        Tn p = Tn::from_values({1}, {a});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Rotate, p, fz, t), 228);
            },
            img);
    });
    add("tf_scale_params", kGridTol, [fz] {
        const double sc = safe_scale_factor(8, 8);
        Tn img = uniform({2, 3, 8, 8}, 229, 0.1, 0.9);
        Tn p = Tn::from_values({1}, {sc});
        return check1(
            [&](Graph<D>&, Tn& t) {
                return weighted_sum(apply_base(BaseOpKind::Scale, t, fz, img), 230);
            },
            p);
    });
    add("tf_chain_contrast_rotate_solarize", kGridTol, [] {
        const double a = safe_rotate_angle(8, 8);
        TransformChain chain{{BaseOpKind::Contrast, BaseOpKind::Rotate, BaseOpKind::Solarize}};
        Tn img = uniform({2, 3, 8, 8}, 231, 0.15, 0.85);
        TransformParams<D> prm;
        prm.learnable = {Tn::from_values({1}, {0.8}), Tn::from_values({1}, {a}),
                         Tn::from_values({1}, {0.2})};
        prm.frozen.assign(3, FrozenAttrs{});
        double e = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            e = std::max(e, check1(
                                [&](Graph<D>&, Tn&) {
                                    return weighted_sum(apply_chain(chain, prm, img), 232 + k);
                                },
                                prm.learnable[k]));
        }
        return e;
    });
    add("tf_chain_hsv_translate_contrast", kGridTol, [] {
        TransformChain chain{{BaseOpKind::HSV, BaseOpKind::Translate, BaseOpKind::Contrast}};
        const double th[6] = {1, 0, -2 * 0.137, 0, 1, -2 * 0.083};
        require_lattice_safe(th, 8, 8);
        Tn img = hsv_safe_image(2, 8, 8, 235);
        TransformParams<D> prm;
        prm.learnable = {Tn::from_values({3}, {0.0073, -0.031, 0.024}),
                         Tn::from_values({2}, {0.137, 0.083}), Tn::from_values({1}, {0.8})};
        prm.frozen.assign(3, FrozenAttrs{});
        double e = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            e = std::max(e, check1(
                                [&](Graph<D>&, Tn&) {
                                    return weighted_sum(apply_chain(chain, prm, img), 236 + k);
                                },
                                prm.learnable[k]));
        }
        return e;
    });

    return s;
}

std::vector<Suite> loss_suites() {
    std::vector<Suite> s;
    const auto add = [&](std::string name, double tol, std::function<double()> run) {
        s.push_back({std::move(name), tol, std::move(run)});
    };

    add("loss_cross_entropy", kTol, [] {
        Tn logits = uniform({4, 3}, 401, -2, 2);
        const std::vector<std::size_t> labels{0, 2, 1, 0};
        return check1([&](Graph<D>&, Tn& x) { return cross_entropy(x, labels); },
                      logits);
    });
    add("loss_entropy", kTol, [] {
        Tn logits = uniform({3, 5}, 403, -2, 2);
        double e = check1([](Graph<D>&, Tn& x) { return entropy(x); }, logits);
        return std::max(e, check1([](Graph<D>&, Tn& x) {
                                      return weighted_sum(entropy_per_sample(x), 404);
                                  },
                                  logits));
    });
    add("loss_feature_distance", kTol, [] {
        Tn v = uniform({3, 8}, 405, -1, 1), vp = uniform({3, 8}, 406, -1, 1);
        double e = check1([&](Graph<D>&, Tn& x) {
                              return weighted_sum(feature_distance(x, vp), 407);
                          },
                          v);
        return std::max(e, check1([&](Graph<D>&, Tn& x) {
                                      return weighted_sum(feature_distance(v, x), 408);
                                  },
                                  vp));
    });
    add("loss_contrastive", kTol, [] {
        const std::vector<std::size_t> labels{0, 1, 0, 1};
        // Directly on (approximately unit) rows, and through the normalizer.
        Tn raw = uniform({4, 6}, 409, -1, 1);
        double e = check1([&](Graph<D>&, Tn& x) {
                              return contrastive(o::l2_normalize(x), labels);
                          },
                          raw);
        Tn u = o::l2_normalize(uniform({4, 6}, 410, -1, 1));
        return std::max(e, check1([&](Graph<D>&, Tn& x) { return contrastive(x, labels); }, u));
    });
    add("loss_minimization", kTol, [] {
        // Composite through shared features: logits and projections both
        // depend on the perturbed tensor, as they do downstream of fc2.
        Tn z = uniform({4, 7}, 411, -1, 1);
        Tn wc = uniform({7, 5}, 412, -1, 1), wp = uniform({7, 6}, 413, -1, 1);
        const std::vector<std::size_t> labels{1, 4, 1, 0};
        return check1([&](Graph<D>&, Tn& x) {
                          Tn logits = o::matmul(x, wc);
                          Tn u = o::l2_normalize(o::matmul(x, wp));
                          return minimization_loss(logits, labels, u, 10.0).total;
                      },
                      z);
    });
    add("loss_maximization", kTol, [] {
        Tn z = uniform({3, 6}, 414, -1, 1);
        Tn wc = uniform({6, 4}, 415, -1, 1), wv = uniform({6, 5}, 416, -1, 1);
        Tn v0 = uniform({3, 5}, 417, -1, 1);
        const std::vector<std::size_t> labels{2, 0, 3};
        return check1([&](Graph<D>&, Tn& x) {
                          Tn logits = o::matmul(x, wc);
                          Tn vp = o::matmul(x, wv);
                          return maximization_objective(logits, labels, v0, vp, 0.3, 10.0);
                      },
                      z);
    });

    return s;
}

std::vector<Suite> pipeline_suites() {
    std::vector<Suite> s;
    const auto add = [&](std::string name, double tol, std::function<double()> run) {
        s.push_back({std::move(name), tol, std::move(run)});
    };

    // End-to-end ascent objective as the trainer differentiates it: the
    // network stays frozen, gradients flow to the transform parameters only.
    const auto objective_err = [](TransformChain chain, TransformParams<D> prm,
                                  Tn img, std::uint64_t model_seed) {
        Rng mr(model_seed);
        auto model = init_model<D>(4, mr);
        const std::vector<std::size_t> labels{2};
        const Tn v0 = forward(model, img).v;  // pure evaluation: frozen source embedding
        double e = 0;
        for (std::size_t k = 0; k < chain.length(); ++k) {
            e = std::max(e, check1(
                                [&](Graph<D>&, Tn&) {
                                    Tn out = apply_chain(chain, prm, img);
                                    auto fo = forward(model, out);
                                    return maximization_objective(fo.logits, labels, v0,
                                                                  fo.v, 0.1, 10.0);
                                },
                                // h far below every activation margin while still
                                // three decades above the double-precision FD floor
                                prm.learnable[k], 1e-7));
        }
        return e;
    };

    add("pipeline_hsv_contrast_omega", kTol, [objective_err] {
        TransformChain chain{{BaseOpKind::HSV, BaseOpKind::Contrast}};
        TransformParams<D> prm;
        prm.learnable = {Tn::from_values({3}, {0.0073, -0.031, 0.024}),
                         Tn::from_values({1}, {0.8})};
        prm.frozen.assign(2, FrozenAttrs{});
        return objective_err(chain, prm, hsv_safe_image(1, 32, 32, 501), 502);
    });
    add("pipeline_translate_rotate_omega", kGridTol, [objective_err] {
        const double a = safe_rotate_angle(32, 32);
        const double th[6] = {1, 0, -2 * 0.137, 0, 1, -2 * 0.083};
        require_lattice_safe(th, 32, 32);
        TransformChain chain{{BaseOpKind::Translate, BaseOpKind::Rotate}};
        TransformParams<D> prm;
        prm.learnable = {Tn::from_values({2}, {0.137, 0.083}), Tn::from_values({1}, {a})};
        prm.frozen.assign(2, FrozenAttrs{});
        return objective_err(chain, prm, uniform({1, 3, 32, 32}, 503, 0.1, 0.9), 504);
    });

    return s;
}

std::vector<SuiteResult> run_suites(const std::vector<Suite>& suites) {
    std::vector<SuiteResult> out;
    out.reserve(suites.size());
    for (const auto& s : suites) out.push_back({s.name, s.run(), s.tol});
    return out;
}

}  // namespace

std::vector<SuiteResult> run_primitive_gradchecks() {
    return run_suites(primitive_suites());
}

std::vector<SuiteResult> run_transform_gradchecks() {
    return run_suites(transform_suites());
}

std::vector<SuiteResult> run_loss_gradchecks() {
    return run_suites(loss_suites());
}

std::vector<SuiteResult> run_pipeline_gradchecks() {
    return run_suites(pipeline_suites());
}

}  // namespace advst
