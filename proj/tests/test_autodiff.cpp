#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "advst/gradcheck.hpp"
#include "advst/gradcheck_suites.hpp"
#include "advst/ops.hpp"
#include "advst/tensor.hpp"

using advst::ContractError;
using advst::Graph;
using advst::Rng;
using advst::StateError;
using advst::Tensor;
namespace o = advst::ops;

using Tn = Tensor<double>;

TEST_CASE("tensor basics") {
    Tn t = Tn::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6);
    CHECK_THROWS_AS(Tn::from_values({2, 2}, {1, 2, 3}), ContractError);
    CHECK_THROWS_AS(t.item(), ContractError);
    CHECK(Tn::scalar(7.0).item() == 7.0);
}

TEST_CASE("loss = x*x at x=3 gives gradient 6") {
    Tn x = Tn::scalar(3.0);
    Graph<double> g;
    g.adopt(x);
    Tn loss = o::mul(x, x);
    g.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("loss = sum(relu(x)) at (-1,2) gives gradient (0,1)") {
    Tn x = Tn::from_values({2}, {-1.0, 2.0});
    Graph<double> g;
    g.adopt(x);
    Tn loss = o::sum_all(o::relu(x));
    g.backward(loss);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("clamp forward and subgradient outside the interval") {
    Tn x = Tn::scalar(1.7);
    Graph<double> g;
    g.adopt(x);
    Tn y = o::clamp(x, 0.0, 1.0);
    CHECK(y.item() == 1.0);
    g.backward(y);
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("softmax of zero logits is uniform") {
    Tn x = Tn::zeros({1, 10});
    Tn y = o::softmax(x);
    for (std::size_t j = 0; j < 10; ++j)
        CHECK(y.at({0, j}) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("conv2d of all-ones 3x3 input with all-ones 2x2 kernel gives 4s") {
    Tn x = Tn::full({1, 1, 3, 3}, 1.0);
    Tn w = Tn::full({1, 1, 2, 2}, 1.0);
    Tn b = Tn::zeros({1});
    Tn y = o::conv2d(x, w, b);
    CHECK(y.shape() == std::vector<std::size_t>{1, 1, 2, 2});
    for (auto v : y.values()) CHECK(v == doctest::Approx(4.0));
}

TEST_CASE("backward preconditions") {
    Tn x = Tn::from_values({2}, {1.0, 2.0});
    Graph<double> g;
    g.adopt(x);
    Tn y = o::mul(x, x);

    SUBCASE("non-scalar root is a contract violation") {
        CHECK_THROWS_AS(g.backward(y), ContractError);
    }
    SUBCASE("root from another graph is a contract violation") {
        Tn z = o::sum_all(y);
        Graph<double> g2;
        CHECK_THROWS_AS(g2.backward(z), ContractError);
    }
    SUBCASE("second backward on the same graph is a state error") {
        Tn z = o::sum_all(y);
        g.backward(z);
        CHECK_THROWS_AS(g.backward(z), StateError);
    }
}

TEST_CASE("unused inputs receive exactly zero gradient") {
    Tn x = Tn::from_values({2}, {1.0, 2.0});
    Tn unused = Tn::from_values({2}, {5.0, 6.0});
    Graph<double> g;
    g.adopt(x);
    g.adopt(unused);
    Tn loss = o::sum_all(o::mul(x, x));
    g.backward(loss);
    CHECK(unused.grad()[0] == 0.0);
    CHECK(unused.grad()[1] == 0.0);
}

TEST_CASE("tensors bound to a dead graph act as constants") {
    Tn w = Tn::from_values({1}, {2.0});
    {
        Graph<double> g0;
        g0.adopt(w);  // binding goes stale when g0 dies
    }
    Tn x = Tn::from_values({1}, {3.0});
    Graph<double> g;
    g.adopt(x);
    Tn loss = o::mul(x, w);
    g.backward(loss);
    CHECK(x.grad()[0] == 2.0);
    // w's gradient buffer belongs to the dead graph and was never touched.
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("mixing two live graphs is a contract violation") {
    Tn a = Tn::scalar(1.0), b = Tn::scalar(2.0);
    Graph<double> g1, g2;
    g1.adopt(a);
    g2.adopt(b);
    CHECK_THROWS_AS(o::add(a, b), ContractError);
}

TEST_CASE("backward is linear: grad(a*f + b*g) = a*grad(f) + b*grad(g)") {
    Rng rng(77);
    auto fresh = [&] {
        Tn x = Tn::zeros({4});
        advst::fill_uniform(x, rng, 0.5, 2.0);
        return x;
    };
    Tn x = fresh();
    const double ca = 1.7, cb = -0.6;

    auto grad_of = [&](auto make_loss) {
        Graph<double> g;
        g.adopt(x);
        g.backward(make_loss());
        return x.grad();
    };
    auto f = [&] { return o::sum_all(o::mul(x, x)); };
    auto h = [&] { return o::sum_all(o::exp(x)); };
    auto gf = grad_of(f);
    auto gh = grad_of(h);
    auto gc = grad_of([&] { return o::add(o::muls(f(), ca), o::muls(h(), cb)); });
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::abs(gc[i] - (ca * gf[i] + cb * gh[i])) < 1e-10);
}

TEST_CASE("finite differences on sum of squares are near exact") {
    Tn x = Tn::from_values({3}, {1.0, 2.0, 3.0});
    auto res = advst::fd_check<double>(
        [&](Graph<double>& g) {
            (void)g;
            return o::sum_all(o::mul(x, x));
        },
        x, 1e-5);
    CHECK(res.max_rel_err < 1e-8);
}

TEST_CASE("log and div reject invalid operands") {
    CHECK_THROWS_AS(o::log(Tn::from_values({2}, {1.0, 0.0})), advst::DomainError);
    CHECK_THROWS_AS(o::log(Tn::scalar(-1.0)), advst::DomainError);
    CHECK_THROWS_AS(o::div(Tn::scalar(1.0), Tn::scalar(0.0)), advst::DomainError);
}

TEST_CASE("shape mismatches name the op and the shapes") {
    Tn a = Tn::zeros({2, 3}), b = Tn::zeros({3, 2});
    try {
        o::add(a, b);
        FAIL("expected a contract violation");
    } catch (const ContractError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[3,2]") != std::string::npos);
    }
}

TEST_CASE("grid_sample zero padding and out-of-bounds rules") {
    // A fully out-of-bounds sample point reads 0 and sends no gradient to
    // either the image or the grid location.
    Tn x = Tn::full({1, 1, 4, 4}, 0.7);
    Tn grid = Tn::from_values({1, 1, 1, 2}, {-3.0, -3.0});
    Graph<double> g;
    g.adopt(x);
    g.adopt(grid);
    Tn y = o::grid_sample(x, grid);
    CHECK(y.item() == 0.0);
    g.backward(o::sum_all(y));
    for (auto v : x.grad()) CHECK(v == 0.0);
    CHECK(grid.grad()[0] == 0.0);
    CHECK(grid.grad()[1] == 0.0);
}

TEST_CASE("grid_sample identity grid reproduces the image") {
    Rng rng(5);
    Tn x = Tn::zeros({1, 2, 5, 7});
    advst::fill_uniform(x, rng, 0.0, 1.0);
    Tn theta = Tn::from_values({1, 2, 3}, {1, 0, 0, 0, 1, 0});
    Tn y = o::grid_sample(x, o::affine_grid(theta, 5, 7));
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-12));
}

TEST_CASE("maxpool keeps the first of equal values") {
    Tn x = Tn::from_values({1, 1, 2, 2}, {5.0, 5.0, 5.0, 5.0});
    Graph<double> g;
    g.adopt(x);
    Tn y = o::maxpool2x2(x);
    CHECK(y.item() == 5.0);
    g.backward(o::sum_all(y));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 0.0);
    CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("every primitive passes its finite-difference suite") {
    for (const auto& r : advst::run_primitive_gradchecks()) {
        INFO(r.name << " err=" << r.max_rel_err << " tol=" << r.tol);
        CHECK(r.pass());
    }
}

TEST_CASE("the relu mutation fixture is caught by the suite") {
    advst::ops::detail::corrupt_relu_backward = true;
    bool failed = false;
    for (const auto& r : advst::run_primitive_gradchecks())
        if (!r.pass()) failed = true;
    advst::ops::detail::corrupt_relu_backward = false;
    CHECK(failed);
}
