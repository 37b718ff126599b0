#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "paqdet/gradcheck.hpp"
#include "paqdet/ops.hpp"
#include "paqdet/rng.hpp"
#include "paqdet/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

using namespace paqdet;
using ad::Graph;
using ad::Shape;
using ad::Tensor;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Values bounded away from zero, for ops with kinks or poles there.
std::vector<double> random_values_away_from(Rng& rng, std::size_t n, double margin) {
    std::vector<double> v(n);
    for (auto& x : v) {
        do {
            x = rng.uniform(-2.0, 2.0);
        } while (std::abs(x) < margin);
    }
    return v;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("tensor shape bookkeeping") {
    Tensor t = ad::make_constant({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.size() == 6);
    CHECK(ad::numel(t.shape()) == t.size());
    CHECK_FALSE(t.requires_grad());

    CHECK_THROWS_AS((void)ad::make_constant({2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS((void)t.item(), std::invalid_argument);
    CHECK(ad::make_constant({1}, {7.5}).item() == 7.5);
}

TEST_CASE("matmul against identity") {
    Tensor a = ad::make_constant({2, 2}, {1, 2, 3, 4});
    Tensor eye = ad::make_constant({2, 2}, {1, 0, 0, 1});
    Tensor out = ad::matmul(a, eye);
    for (int i = 0; i < 4; ++i) CHECK(out.values()[i] == a.values()[i]);
}

TEST_CASE("softmax of a uniform row") {
    Tensor out = ad::softmax_rows(ad::make_constant({1, 2}, {0, 0}));
    CHECK(out.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out.values()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("relu clamps negatives") {
    Tensor out = ad::relu(ad::make_constant({2}, {-1, 2}));
    CHECK(out.values()[0] == 0);
    CHECK(out.values()[1] == 2);
}

TEST_CASE("softmax rows are a probability simplex") {
    Rng rng(41);
    Tensor x = ad::make_constant({6, 5}, random_values(rng, 30, -8, 8));
    Tensor p = ad::softmax_rows(x);
    for (int r = 0; r < 6; ++r) {
        double s = 0;
        for (int c = 0; c < 5; ++c) {
            double v = p.values()[r * 5 + c];
            CHECK(v >= 0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("backward of sum is ones") {
    Graph g;
    Tensor x = g.leaf({3}, {5, -1, 2});
    g.backward(ad::sum(x));
    auto gx = g.grad(x);
    CHECK(gx == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of sum of squares") {
    Graph g;
    Tensor x = g.leaf({1}, {2});
    g.backward(ad::sum(ad::mul(x, x)));
    CHECK(g.grad(x)[0] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("softmax row sums have zero gradient") {
    Graph g;
    Rng rng(7);
    Tensor x = g.leaf({3, 4}, random_values(rng, 12));
    g.backward(ad::sum(ad::softmax_rows(x)));
    for (double v : g.grad(x)) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("gradient buffers exist and match shapes") {
    Graph g;
    Tensor a = g.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = g.leaf({3}, {1, 1, 1});
    g.backward(ad::sum(ad::add(a, b)));
    REQUIRE(g.has_grad(a));
    REQUIRE(g.has_grad(b));
    CHECK(g.grad(a).size() == 6);
    CHECK(g.grad(b).size() == 3);
}

TEST_CASE("second backward without reset is rejected") {
    Graph g;
    Tensor x = g.leaf({2}, {1, 2});
    Tensor loss = ad::sum(ad::mul(x, x));
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), std::logic_error);
    g.zero_grad();
    g.backward(loss);  // fine after explicit reset
    CHECK(g.grad(x)[0] == doctest::Approx(2.0));
}

TEST_CASE("non-scalar loss is rejected") {
    Graph g;
    Tensor x = g.leaf({2}, {1, 2});
    CHECK_THROWS_AS(g.backward(ad::mul(x, x)), std::invalid_argument);
}

TEST_CASE("shape mismatches name the offending shapes") {
    Tensor a = ad::make_constant({2, 3}, std::vector<double>(6, 1.0));
    Tensor b = ad::make_constant({4, 2}, std::vector<double>(8, 1.0));
    try {
        (void)ad::matmul(a, b);
        FAIL("expected a throw");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,2)") != std::string::npos);
    }
    CHECK_THROWS_AS((void)ad::add(a, b), std::invalid_argument);
    CHECK_THROWS_AS((void)ad::divide(a, b), std::invalid_argument);
}

TEST_CASE("mixing tensors from two graphs is rejected") {
    Graph g1, g2;
    Tensor a = g1.leaf({2}, {1, 2});
    Tensor b = g2.leaf({2}, {3, 4});
    CHECK_THROWS_AS((void)ad::add(a, b), std::invalid_argument);
}

TEST_CASE("fan-out accumulates both contributions") {
    // x feeds two branches; compare the summed gradient against finite
    // differences.
    auto f = [](Graph*, const Tensor& x) {
        return ad::add(ad::sum(ad::mul(x, x)), ad::sum(ad::sigmoid(x)));
    };
    Rng rng(11);
    double err = ad::finite_difference_check(f, {2, 3}, random_values(rng, 6), 1e-5);
    CHECK(err <= 1e-6);

    Graph g;
    Tensor x = g.leaf({2}, {1.0, -0.5});
    g.backward(ad::add(ad::sum(x), ad::sum(x)));
    CHECK(g.grad(x)[0] == doctest::Approx(2.0));
    CHECK(g.grad(x)[1] == doctest::Approx(2.0));
}

TEST_CASE("finite_difference_check reference behaviors") {
    Rng rng(3);

    auto sum_sq = [](Graph*, const Tensor& x) { return ad::sum(ad::mul(x, x)); };
    CHECK(ad::finite_difference_check(sum_sq, {5}, random_values(rng, 5), 1e-5) <= 1e-6);

    auto softmax_col = [](Graph*, const Tensor& x) {
        return ad::sum(ad::slice_cols(ad::softmax_rows(x), 0, 1));
    };
    CHECK(ad::finite_difference_check(softmax_col, {3, 4}, random_values(rng, 12), 1e-5) <= 1e-5);

    auto constant_fn = [](Graph*, const Tensor& x) {
        return ad::sum(ad::scale(x, 0.0));
    };
    CHECK(ad::finite_difference_check(constant_fn, {4}, random_values(rng, 4), 1e-5) == 0.0);

    auto anything = [](Graph*, const Tensor& x) { return ad::sum(x); };
    CHECK_THROWS_AS((void)ad::finite_difference_check(anything, {2}, {1, 2}, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)ad::finite_difference_check(anything, {2}, {1, 2}, 0.5),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)ad::finite_difference_check(anything, {2}, {1, 2, 3}, 1e-5),
                    std::invalid_argument);
}

// Every differentiable primitive, checked at 100 random smooth points with a
// random linear readout so upstream gradients are non-uniform.
TEST_CASE("per-primitive finite-difference property") {
    struct Case {
        const char* name;
        Shape in_shape;
        Shape out_shape;          // shape of the readout weight
        bool away_from_zero;      // relu/abs kinks, min/max crossings
        std::function<Tensor(const Tensor&)> op;
    };

    std::vector<Case> cases = {
        {"matmul_lhs", {3, 4}, {3, 2}, false,
         [](const Tensor& x) {
             Tensor b = ad::make_constant({4, 2}, {0.3, -1, 0.7, 2, -0.4, 0.1, 1.5, -0.2});
             return ad::matmul(x, b);
         }},
        {"matmul_rhs", {4, 2}, {3, 2}, false,
         [](const Tensor& x) {
             Tensor a = ad::make_constant(
                 {3, 4}, {0.2, 1.1, -0.6, 0.9, -1.2, 0.4, 0.8, -0.3, 0.5, -0.7, 1.3, 0.1});
             return ad::matmul(a, x);
         }},
        {"transpose", {3, 4}, {4, 3}, false, [](const Tensor& x) { return ad::transpose(x); }},
        {"add_same", {2, 3}, {2, 3}, false, [](const Tensor& x) { return ad::add(x, x); }},
        {"add_broadcast", {2, 3}, {2, 3}, false,
         [](const Tensor& x) {
             return ad::add(x, ad::make_constant({3}, {0.5, -1.5, 2.0}));
         }},
        {"sub", {2, 3}, {2, 3}, false,
         [](const Tensor& x) {
             return ad::sub(x, ad::make_constant({2, 3}, {1, -2, 0.5, 0.25, 3, -1}));
         }},
        {"mul", {2, 3}, {2, 3}, false,
         [](const Tensor& x) {
             return ad::mul(x, ad::make_constant({2, 3}, {1.5, -0.5, 2, 0.75, -2, 1}));
         }},
        {"mul_broadcast", {2, 3}, {2, 3}, false,
         [](const Tensor& x) {
             return ad::mul(x, ad::make_constant({3}, {1.5, -0.5, 2}));
         }},
        {"divide_num", {2, 3}, {2, 3}, false,
         [](const Tensor& x) {
             return ad::divide(x, ad::make_constant({2, 3}, {1.5, 2.5, 1.25, 3, 2, 1.75}));
         }},
        {"divide_den", {2, 3}, {2, 3}, false,
         [](const Tensor& x) {
             Tensor numer = ad::make_constant({2, 3}, {1, -2, 3, -1, 2, 0.5});
             return ad::divide(numer, ad::add_scalar(ad::mul(x, x), 1.0));
         }},
        {"minimum", {2, 3}, {2, 3}, true,
         [](const Tensor& x) {
             return ad::minimum(x, ad::make_constant({2, 3}, {0.01, -0.02, 0.03, -0.01, 0.02, -0.03}));
         }},
        {"maximum", {2, 3}, {2, 3}, true,
         [](const Tensor& x) {
             return ad::maximum(x, ad::make_constant({2, 3}, {0.01, -0.02, 0.03, -0.01, 0.02, -0.03}));
         }},
        {"scale_add_neg", {2, 3}, {2, 3}, false,
         [](const Tensor& x) { return ad::neg(ad::add_scalar(ad::scale(x, -1.7), 0.3)); }},
        {"relu", {2, 3}, {2, 3}, true, [](const Tensor& x) { return ad::relu(x); }},
        {"sigmoid", {2, 3}, {2, 3}, false, [](const Tensor& x) { return ad::sigmoid(x); }},
        {"softplus", {2, 3}, {2, 3}, false, [](const Tensor& x) { return ad::softplus(x); }},
        {"inverse_sigmoid", {2, 3}, {2, 3}, false,
         [](const Tensor& x) {
             // map into (0.05, 0.95) so probes stay inside the clamp
             return ad::inverse_sigmoid(ad::add_scalar(ad::scale(ad::sigmoid(x), 0.9), 0.05));
         }},
        {"log", {2, 3}, {2, 3}, false,
         [](const Tensor& x) { return ad::log(ad::add_scalar(ad::mul(x, x), 0.5)); }},
        {"exp", {2, 3}, {2, 3}, false, [](const Tensor& x) { return ad::exp(x); }},
        {"pow", {2, 3}, {2, 3}, false,
         [](const Tensor& x) { return ad::pow(ad::add_scalar(ad::sigmoid(x), 0.1), 2.5); }},
        {"abs", {2, 3}, {2, 3}, true, [](const Tensor& x) { return ad::abs(x); }},
        {"softmax_rows", {3, 4}, {3, 4}, false,
         [](const Tensor& x) { return ad::softmax_rows(x); }},
        {"layer_norm_rows", {3, 4}, {3, 4}, false,
         [](const Tensor& x) { return ad::layer_norm_rows(x); }},
        {"gather_rows", {4, 3}, {3, 3}, false,
         [](const Tensor& x) { return ad::gather_rows(x, {2, 0, 2}); }},
        {"slice_cols", {3, 5}, {3, 3}, false,
         [](const Tensor& x) { return ad::slice_cols(x, 1, 4); }},
        {"concat_axis0", {2, 3}, {4, 3}, false,
         [](const Tensor& x) { return ad::concat(x, x, 0); }},
        {"concat_axis1", {2, 3}, {2, 6}, false,
         [](const Tensor& x) { return ad::concat(x, x, 1); }},
        {"reshape", {2, 6}, {3, 4}, false,
         [](const Tensor& x) { return ad::reshape(x, {3, 4}); }},
        {"sum", {2, 3}, {1}, false, [](const Tensor& x) { return ad::sum(x); }},
        {"mean", {2, 3}, {1}, false, [](const Tensor& x) { return ad::mean(x); }},
    };

    Rng rng(2024);
    for (const Case& c : cases) {
        CAPTURE(c.name);
        double worst = 0;
        for (int trial = 0; trial < 100; ++trial) {
            std::size_t n = ad::numel(c.in_shape);
            std::vector<double> x = c.away_from_zero ? random_values_away_from(rng, n, 0.05)
                                                     : random_values(rng, n);
            Tensor w = ad::make_constant(c.out_shape, random_values(rng, ad::numel(c.out_shape)));
            auto f = [&](Graph*, const Tensor& in) { return ad::sum(ad::mul(c.op(in), w)); };
            worst = std::max(worst, ad::finite_difference_check(f, c.in_shape, x, 1e-5));
        }
        CHECK_MESSAGE(worst <= 1e-5, c.name << " worst rel err " << worst);
    }
}

}  // TEST_SUITE
