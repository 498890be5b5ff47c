#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "scalevar/adam.hpp"
#include "scalevar/rng.hpp"
#include "scalevar/tensor.hpp"

using namespace scalevar;

namespace {

Tensor sum_all(const Tensor& x) {
    Tensor left = Tensor::full(1, x.rows(), 1.0);
    Tensor right = Tensor::full(x.cols(), 1, 1.0);
    return matmul(matmul(left, x), right);
}

std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.next_double();
    return v;
}

// Central finite differences against reverse-mode gradients. `build` must
// construct the scalar loss from scratch each call so the graph is fresh.
double max_grad_rel_err(std::vector<Tensor>& params,
                        const std::function<Tensor(std::vector<Tensor>&)>& build,
                        std::size_t max_coords_per_param = 64) {
    Tensor loss = build(params);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) analytic.push_back(p.grad());

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::size_t n = std::min(params[pi].size(), max_coords_per_param);
        for (std::size_t i = 0; i < n; ++i) {
            const double orig = params[pi].values()[i];
            params[pi].values_mut()[i] = orig + h;
            const double fp = build(params).scalar();
            params[pi].values_mut()[i] = orig - h;
            const double fm = build(params).scalar();
            params[pi].values_mut()[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = analytic[pi][i];
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor eye = Tensor::from(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor b = Tensor::from(3, 2, {1, 2, 3, 4, 5, 6});
    Tensor c = matmul(eye, b);
    REQUIRE(c.values() == b.values());
}

TEST_CASE("matmul hand oracle") {
    Tensor a = Tensor::from(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::from(2, 1, {5, 6});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 17.0);
    CHECK(c.at(1, 0) == 39.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    Tensor a = Tensor::from(4, 5, random_values(rng, 20));
    Tensor b = Tensor::from(5, 3, random_values(rng, 15));
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 5; ++k) acc += a.at(i, k) * b.at(k, j);
            CHECK(std::abs(c.at(i, j) - acc) < 1e-12);
        }
    }
}

TEST_CASE("matmul shape mismatch throws") {
    Tensor a = Tensor::zeros(2, 3);
    Tensor b = Tensor::zeros(2, 3);
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("softmax of constant row is uniform") {
    Tensor x = Tensor::from(1, 3, {0, 0, 0});
    Tensor y = softmax_rows(x);
    for (std::size_t j = 0; j < 3; ++j) CHECK(y.at(0, j) == Catch::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax max-shift avoids overflow") {
    Tensor x = Tensor::from(1, 2, {1000.0, 0.0});
    Tensor y = softmax_rows(x);
    REQUIRE(y.all_finite());
    CHECK(y.at(0, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(y.at(0, 1) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("softmax matches exp-normalize oracle") {
    Tensor x = Tensor::from(1, 3, {1, 2, 3});
    Tensor y = softmax_rows(x);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(y.at(0, j) - std::exp(1.0 + j) / z) < 1e-15);
    }
}

TEST_CASE("softmax rows sum to one and lie in [0,1]") {
    Rng rng(7);
    Tensor x = Tensor::from(8, 13, random_values(rng, 8 * 13, -30.0, 30.0));
    Tensor y = softmax_rows(x);
    for (std::size_t r = 0; r < 8; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 13; ++j) {
            const double p = y.at(r, j);
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            s += p;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax rejects NaN input") {
    Tensor x = Tensor::from(1, 2, {std::nan(""), 0.0});
    CHECK_THROWS_AS(softmax_rows(x), numeric_error);
}

TEST_CASE("layer_norm constant row collapses to bias") {
    Tensor x = Tensor::from(1, 4, {2.5, 2.5, 2.5, 2.5});
    Tensor g = Tensor::from(1, 4, {1, 1, 1, 1});
    Tensor b = Tensor::from(1, 4, {0, 0, 0, 0});
    Tensor y = layer_norm(x, g, b, 1e-5);
    for (std::size_t j = 0; j < 4; ++j) CHECK(y.at(0, j) == 0.0);
}

TEST_CASE("layer_norm hand oracle") {
    Tensor x = Tensor::from(1, 2, {1, 3});
    Tensor g = Tensor::from(1, 2, {1, 1});
    Tensor b = Tensor::from(1, 2, {0, 0});
    Tensor y = layer_norm(x, g, b, 1e-12);
    CHECK(y.at(0, 0) == Catch::Approx(-1.0).epsilon(1e-9));
    CHECK(y.at(0, 1) == Catch::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm rows have zero mean unit variance before affine") {
    Rng rng(23);
    const std::size_t t = 6, c = 9;
    Tensor x = Tensor::from(t, c, random_values(rng, t * c, -4.0, 4.0));
    Tensor g = Tensor::full(1, c, 1.0);
    Tensor b = Tensor::full(1, c, 0.0);
    Tensor y = layer_norm(x, g, b, 1e-12);
    for (std::size_t r = 0; r < t; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += y.at(r, j);
        mean /= c;
        for (std::size_t j = 0; j < c; ++j) var += (y.at(r, j) - mean) * (y.at(r, j) - mean);
        var /= c;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-10);
    }
}

TEST_CASE("cross_entropy uniform logits") {
    Tensor x = Tensor::zeros(2, 4);
    Tensor loss = cross_entropy(x, {1, 3});
    CHECK(loss.scalar() == Catch::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("cross_entropy one-hot limit") {
    Tensor x = Tensor::from(1, 3, {50.0, 0.0, 0.0});
    Tensor loss = cross_entropy(x, {0});
    CHECK(loss.scalar() < 1e-20);
}

TEST_CASE("cross_entropy matches log-sum-exp oracle") {
    Rng rng(5);
    Tensor x = Tensor::from(3, 5, random_values(rng, 15, -3.0, 3.0));
    std::vector<std::uint32_t> targets{4, 0, 2};
    Tensor loss = cross_entropy(x, targets);
    double expect = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
        double lse = 0.0;
        for (std::size_t j = 0; j < 5; ++j) lse += std::exp(x.at(r, j));
        expect += std::log(lse) - x.at(r, targets[r]);
    }
    expect /= 3.0;
    CHECK(std::abs(loss.scalar() - expect) < 1e-12);
}

TEST_CASE("cross_entropy rejects out-of-range target") {
    Tensor x = Tensor::zeros(1, 4);
    CHECK_THROWS_AS(cross_entropy(x, {4}), std::out_of_range);
}

TEST_CASE("backward of sum is all-ones") {
    Rng rng(3);
    Tensor x = Tensor::param(3, 4, random_values(rng, 12));
    backward(sum_all(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of quadratic is identity") {
    Rng rng(4);
    Tensor x = Tensor::param(5, 1, random_values(rng, 5));
    Tensor loss = scale(matmul(transpose(x), x), 0.5);
    backward(loss);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(x.grad()[i] == Catch::Approx(x.values()[i]).epsilon(1e-14));
    }
}

TEST_CASE("backward requires scalar root") {
    Tensor x = Tensor::param(2, 2, {1, 2, 3, 4});
    Tensor y = add(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("backward is bit-identical across repeated evaluation") {
    Rng rng(17);
    auto values_a = random_values(rng, 6 * 4);
    auto values_b = random_values(rng, 4 * 3);
    std::vector<std::vector<double>> grads;
    for (int rep = 0; rep < 2; ++rep) {
        Tensor a = Tensor::param(6, 4, values_a);
        Tensor b = Tensor::param(4, 3, values_b);
        Tensor y = softmax_rows(matmul(a, b));
        backward(sum_all(mul(y, y)));
        grads.push_back(a.grad());
        std::vector<double> gb = b.grad();
        grads.push_back(gb);
    }
    REQUIRE(grads[0] == grads[2]);
    REQUIRE(grads[1] == grads[3]);
}

TEST_CASE("gradient check: every kernel against central differences") {
    Rng rng(99);
    const double tol = 1e-4;

    SECTION("matmul") {
        std::vector<Tensor> params{Tensor::param(3, 4, random_values(rng, 12)),
                                   Tensor::param(4, 2, random_values(rng, 8))};
        auto build = [](std::vector<Tensor>& p) {
            return sum_all(mul(matmul(p[0], p[1]), matmul(p[0], p[1])));
        };
        CHECK(max_grad_rel_err(params, build) < tol);
    }

    SECTION("add and mul") {
        std::vector<Tensor> params{Tensor::param(2, 5, random_values(rng, 10)),
                                   Tensor::param(2, 5, random_values(rng, 10))};
        auto build = [](std::vector<Tensor>& p) {
            return sum_all(mul(add(p[0], p[1]), p[0]));
        };
        CHECK(max_grad_rel_err(params, build) < tol);
    }

    SECTION("softmax_rows") {
        std::vector<Tensor> params{Tensor::param(3, 6, random_values(rng, 18, -2.0, 2.0))};
        Tensor w = Tensor::from(3, 6, random_values(rng, 18));
        auto build = [w](std::vector<Tensor>& p) { return sum_all(mul(softmax_rows(p[0]), w)); };
        CHECK(max_grad_rel_err(params, build) < tol);
    }

    SECTION("layer_norm") {
        std::vector<Tensor> params{Tensor::param(4, 7, random_values(rng, 28, -2.0, 2.0)),
                                   Tensor::param(1, 7, random_values(rng, 7, 0.5, 1.5)),
                                   Tensor::param(1, 7, random_values(rng, 7))};
        Tensor w = Tensor::from(4, 7, random_values(rng, 28));
        auto build = [w](std::vector<Tensor>& p) {
            return sum_all(mul(layer_norm(p[0], p[1], p[2], 1e-5), w));
        };
        CHECK(max_grad_rel_err(params, build) < tol);
    }

    SECTION("gather_rows") {
        std::vector<Tensor> params{Tensor::param(5, 3, random_values(rng, 15))};
        std::vector<std::uint32_t> ids{0, 2, 2, 4, 1};
        Tensor w = Tensor::from(5, 3, random_values(rng, 15));
        auto build = [ids, w](std::vector<Tensor>& p) {
            return sum_all(mul(gather_rows(p[0], ids), w));
        };
        CHECK(max_grad_rel_err(params, build) < tol);
    }

    SECTION("cross_entropy") {
        std::vector<Tensor> params{Tensor::param(4, 6, random_values(rng, 24, -2.0, 2.0))};
        std::vector<std::uint32_t> targets{1, 5, 0, 3};
        auto build = [targets](std::vector<Tensor>& p) { return cross_entropy(p[0], targets); };
        CHECK(max_grad_rel_err(params, build) < tol);
    }

    SECTION("transpose, reshape, concat_rows") {
        std::vector<Tensor> params{Tensor::param(2, 6, random_values(rng, 12)),
                                   Tensor::param(3, 4, random_values(rng, 12))};
        auto build = [](std::vector<Tensor>& p) {
            Tensor a = reshape(transpose(p[0]), 3, 4);
            Tensor c = concat_rows(a, p[1]);
            return sum_all(mul(c, c));
        };
        CHECK(max_grad_rel_err(params, build) < tol);
    }

    SECTION("composite attention-like block") {
        const std::size_t t = 4, w = 6;
        std::vector<Tensor> params{Tensor::param(t, w, random_values(rng, t * w)),
                                   Tensor::param(w, w, random_values(rng, w * w, -0.5, 0.5)),
                                   Tensor::param(w, w, random_values(rng, w * w, -0.5, 0.5)),
                                   Tensor::param(w, w, random_values(rng, w * w, -0.5, 0.5))};
        std::vector<std::uint32_t> targets{0, 3, 1, 5};
        auto build = [targets](std::vector<Tensor>& p) {
            Tensor q = matmul(p[0], p[1]);
            Tensor k = matmul(p[0], p[2]);
            Tensor v = matmul(p[0], p[3]);
            Tensor att = softmax_rows(scale(matmul(q, transpose(k)), 0.5));
            Tensor o = add(p[0], matmul(att, v));
            return cross_entropy(o, targets);
        };
        CHECK(max_grad_rel_err(params, build) < tol);
    }
}

TEST_CASE("no-grad guard suppresses graph recording") {
    Tensor x = Tensor::param(2, 2, {1, 2, 3, 4});
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam: zero gradient and zero decay leave params unchanged") {
    std::vector<double> p{1.0, -2.0, 3.0};
    std::vector<double> g{0.0, 0.0, 0.0};
    adam::Moments st;
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    adam::update(p, g, st, cfg, 1);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam: bias-corrected first step moves by about lr") {
    std::vector<double> p{1.0};
    std::vector<double> g{1.0};
    adam::Moments st;
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    adam::update(p, g, st, cfg, 1);
    CHECK(p[0] == Catch::Approx(0.9).margin(1e-8));
}

TEST_CASE("adam: decoupled decay scales by (1 - lr*wd)") {
    std::vector<double> p{2.0};
    std::vector<double> g{0.0};
    adam::Moments st;
    AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.05;
    adam::update(p, g, st, cfg, 1);
    CHECK(p[0] == 2.0 * (1.0 - 0.1 * 0.05));
}

TEST_CASE("adam: lr=0 is the identity") {
    std::vector<double> p{1.5, -0.5};
    std::vector<double> g{3.0, -1.0};
    adam::Moments st;
    AdamConfig cfg;
    cfg.lr = 0.0;
    adam::update(p, g, st, cfg, 1);
    CHECK(p == std::vector<double>{1.5, -0.5});
}

TEST_CASE("adam: moment shape mismatch throws") {
    std::vector<double> p{1.0, 2.0};
    std::vector<double> g{1.0};
    adam::Moments st;
    AdamConfig cfg;
    CHECK_THROWS_AS(adam::update(p, g, st, cfg, 1), std::invalid_argument);
}
