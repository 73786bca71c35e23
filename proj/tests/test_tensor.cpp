// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "regformer/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>

using namespace regformer;
using regformer::testing::probe;
using regformer::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-5;
constexpr int kSeeds = 100;

struct UnaryCase {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    double lo, hi;
};

}  // namespace

TEST_CASE("elementwise broadcasting follows numpy rules") {
    const Tensor a({2, 1, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b({4, 1}, {10, 20, 30, 40});
    const Tensor c = a + b;
    REQUIRE(c.shape() == Shape{2, 4, 3});
    CHECK(c[0] == 11);
    CHECK(c[3] == 21);
    CHECK(c[12] == 14);
    CHECK_THROWS_AS(Tensor({3}, {1, 2, 3}) + Tensor({2}, {1, 2}), ShapeError);
}

TEST_CASE("shape errors name both shapes") {
    try {
        (void)matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 5]") != std::string::npos);
    }
}

TEST_CASE("non-finite results raise NumericalError") {
    CHECK_THROWS_AS(log(Tensor::vector({0.0})), NumericalError);
    CHECK_THROWS_AS(Tensor::vector({1.0}) / Tensor::vector({0.0}), NumericalError);
}

TEST_CASE("unary op gradients match central differences over 100 seeds") {
    const std::vector<UnaryCase> cases = {
        {"exp", [](const Tensor& x) { return exp(x); }, -2, 2},
        {"log", [](const Tensor& x) { return log(x); }, 0.5, 3},
        {"abs", [](const Tensor& x) { return abs(x); }, 0.1, 2},
        {"sqrt", [](const Tensor& x) { return sqrt(x); }, 0.5, 3},
        {"relu", [](const Tensor& x) { return relu(x); }, 0.1, 2},
        {"gelu", [](const Tensor& x) { return gelu(x); }, -3, 3},
        {"neg", [](const Tensor& x) { return neg(x); }, -1, 1},
        {"scale", [](const Tensor& x) { return scale(x, 2.5); }, -1, 1},
        {"clamp_min", [](const Tensor& x) { return clamp_min(x, 0.05); }, 0.1, 1},
        {"softmax0", [](const Tensor& x) { return softmax(x, 0); }, -3, 3},
        {"softmax1", [](const Tensor& x) { return softmax(x, 1); }, -3, 3},
        {"sum1", [](const Tensor& x) { return sum(x, 1); }, -1, 1},
        {"mean0", [](const Tensor& x) { return mean(x, 0, true); }, -1, 1},
        {"max1", [](const Tensor& x) { return max(x, 1); }, -1, 1},
        {"l2_norm", [](const Tensor& x) { return l2_norm(x); }, 0.2, 1},
        {"transpose", [](const Tensor& x) { return transpose(x, 0, 1); }, -1, 1},
        {"reshape", [](const Tensor& x) { return reshape(x, {4, 3}); }, -1, 1},
        {"slice", [](const Tensor& x) { return slice(x, 1, 1, 2); }, -1, 1},
        {"index_select",
         [](const Tensor& x) {
             const std::vector<std::size_t> idx{2, 0, 2};
             return index_select(x, 0, idx);
         },
         -1, 1},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        double worst = 0.0;
        for (int seed = 0; seed < kSeeds; ++seed) {
            std::mt19937_64 rng(seed);
            const Tensor x = random_tensor({3, 4}, rng, c.lo, c.hi);
            worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return probe(c.f(t)); }, x));
        }
        CHECK(worst < kGradTol);
    }
}

TEST_CASE("binary and structural op gradients over 100 seeds") {
    double worst = 0.0;
    for (int seed = 0; seed < kSeeds; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        const Tensor a = random_tensor({2, 3, 4}, rng);
        const Tensor b = random_tensor({3, 1}, rng, 0.5, 2.0);
        const Tensor w = random_tensor({4, 5}, rng);
        const Tensor bias = random_tensor({5}, rng);
        const Tensor g = random_tensor({4}, rng, 0.5, 1.5);
        const Tensor beta = random_tensor({4}, rng);
        const Tensor m = random_tensor({2, 4, 2}, rng);
        auto check = [&](const Tensor& x, const std::function<Tensor(const Tensor&)>& f) {
            worst = std::max(worst, finite_difference_check([&](const Tensor& t) { return probe(f(t)); }, x));
        };
        check(a, [&](const Tensor& t) { return t * b + t / b - b; });
        check(b, [&](const Tensor& t) { return a * t + a / t - t; });
        check(a, [&](const Tensor& t) { return linear(t, w, bias); });
        check(w, [&](const Tensor& t) { return linear(a, t, bias); });
        check(bias, [&](const Tensor& t) { return linear(a, w, t); });
        check(a, [&](const Tensor& t) { return matmul(t, m); });
        check(m, [&](const Tensor& t) { return matmul(a, t); });
        check(a, [&](const Tensor& t) { return layer_norm(t, g, beta); });
        check(g, [&](const Tensor& t) { return layer_norm(a, t, beta); });
        check(a, [&](const Tensor& t) { return permute(t, {2, 0, 1}); });
        check(a, [&](const Tensor& t) { return concat({t, scale(t, 2.0)}, 1); });
        check(a, [&](const Tensor& t) { return masked_softmax(t, Tensor({4}, {0, kMaskValue, 0, 0}), 2); });
    }
    CHECK(worst < kGradTol);
}

TEST_CASE("basic op examples") {
    const Tensor s = softmax(Tensor::vector({0.0, 0.0}), 0);
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);
    const Tensor m = softmax(Tensor::vector({0.0, kMaskValue}), 0);
    CHECK(std::abs(m[0] - 1.0) < 1e-12);
    CHECK(m[1] < 1e-12);
    const Tensor ln = layer_norm(Tensor::full({1, 5}, 3.0), Tensor::full({5}, 1.0), Tensor::zeros({5}));
    for (double v : ln.values()) CHECK(v == 0.0);

    Tensor x = Tensor::vector({1.0, 2.0, 3.0}, true);
    sum_all(x).backward();
    for (double g : x.grad()) CHECK(g == 1.0);
    Tensor y = Tensor::vector({1.0, 2.0}, true);
    sum_all(y * y).backward();
    CHECK(y.grad()[0] == 2.0);
    CHECK(y.grad()[1] == 4.0);
    CHECK_THROWS(Tensor::vector({1.0, 2.0}, true).backward());
}

TEST_CASE("finite-difference check of a sum of squares is tight") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({6}, rng);
    CHECK(finite_difference_check([](const Tensor& t) { return sum_all(t * t); }, x) < 1e-8);
}

TEST_CASE("softmax is shift invariant and handles the mask value") {
    const Tensor x({1, 3}, {1.0, 2.0, 3.0});
    const Tensor y = softmax(x, 1);
    const Tensor z = softmax(add_scalar(x, 100.0), 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(z[i]).epsilon(1e-12));
    const Tensor m = masked_softmax(x, Tensor({3}, {0.0, kMaskValue, 0.0}), 1);
    CHECK(m[1] < 1e-12);
    CHECK(m[0] + m[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gradients accumulate across backward calls and reset with zero_grad") {
    Tensor x = Tensor::vector({1.0, 2.0}, true);
    sum_all(x * x).backward();
    sum_all(x * x).backward();
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK(x.grad()[1] == doctest::Approx(8.0));
    x.zero_grad();
    CHECK((x.grad().empty() || x.grad()[0] == 0.0));
}

TEST_CASE("no-grad guard stops graph recording") {
    Tensor x = Tensor::vector({1.0}, true);
    Tensor y;
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        y = x * x;
    }
    CHECK(grad_enabled());
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("f32 precision rounds op outputs") {
    set_precision(Precision::f32);
    const Tensor y = Tensor::vector({1.0}) / Tensor::vector({3.0});
    CHECK(y[0] == static_cast<double>(1.0f / 3.0f));
    set_precision(Precision::f64);
    const Tensor z = Tensor::vector({1.0}) / Tensor::vector({3.0});
    CHECK(z[0] == 1.0 / 3.0);
}

TEST_CASE("finite-difference check reports a broken gradient") {
    // d/dx of a detached copy is zero analytically but not numerically.
    const Tensor x = Tensor::vector({0.3, -0.2}, true);
    const double err = finite_difference_check([](const Tensor& t) { return sum_all(t.detach() * t.detach()) + sum_all(t); }, x);
    CHECK(err > 0.1);
}
