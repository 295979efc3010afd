#include <cmath>
#include <vector>

#include "doctest.h"
#include "pedro/gradcheck.hpp"
#include "pedro/optim.hpp"
#include "pedro/rng.hpp"
#include "pedro/tensor.hpp"

using pedro::Tensor;

namespace {

// Taylor-series erf, independent of std::erf, for cross-checking gelu.
double erf_series(double z) {
    double term = z, sum = z;
    for (int n = 1; n < 60; ++n) {
        term *= -z * z / n;
        sum += term / (2 * n + 1);
    }
    return sum * 2.0 / std::sqrt(std::acos(-1.0));
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + erf_series(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("softmax hand values, normalization, stability") {
    auto x = Tensor<double>::from_data({2}, {0.0, 0.0});
    auto y = pedro::softmax(x, 0);
    CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-12));

    auto big = Tensor<double>::from_data({2}, {1000.0, 0.0});
    auto yb = pedro::softmax(big, 0);
    CHECK(std::isfinite(yb.at(0)));
    CHECK(yb.at(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(yb.at(1) == doctest::Approx(0.0).epsilon(1e-12));

    pedro::GaussianRng rng(123);
    auto m = Tensor<double>::randn({3, 4}, rng, 1.0);
    auto rows = pedro::softmax(m, 1);
    for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int j = 0; j < 4; ++j) {
            s += rows.at(i, j);
            CHECK(rows.at(i, j) > 0.0);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    auto cols = pedro::softmax(m, 0);
    for (int j = 0; j < 4; ++j) {
        double s = 0;
        for (int i = 0; i < 3; ++i) s += cols.at(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS(pedro::softmax(m, 2));
    CHECK_THROWS(pedro::softmax(m, -1));

    // shift invariance along the axis
    auto shifted = m.clone_detached();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) shifted.at(i, j) += 7.25;
    auto rows2 = pedro::softmax(shifted, 1);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(rows2.at(i, j) == doctest::Approx(rows.at(i, j)).epsilon(1e-9));
}

TEST_CASE("gelu agrees with a series-based erf reference") {
    CHECK(gelu_ref(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));

    auto x = Tensor<double>::from_data({5}, {-2.0, -0.5, 0.0, 1.0, 3.0});
    auto y = pedro::gelu(x);
    CHECK(y.at(2) == 0.0);
    CHECK(y.at(3) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    for (int i = 0; i < 5; ++i)
        CHECK(y.at(i) == doctest::Approx(gelu_ref(x.at(i))).epsilon(1e-12));

    auto tail = Tensor<double>::from_data({1}, {10.0});
    CHECK(pedro::gelu(tail).at(0) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("backward on sums and elementwise products") {
    auto w = Tensor<double>::from_data({3}, {1.0, -2.0, 3.0}).set_requires_grad(true);
    auto loss = pedro::sum(w);
    loss.backward();
    for (int i = 0; i < 3; ++i) CHECK(w.grad()[i] == 1.0);

    w.zero_grad();
    auto loss2 = pedro::sum(pedro::mul(w, w));
    loss2.backward();
    for (int i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(2.0 * w.at(i)));

    // repeated backward without reset accumulates
    loss2.backward();
    CHECK(w.grad()[0] == doctest::Approx(4.0 * w.at(0)));

    auto vec = pedro::mul(w, w);
    CHECK_THROWS(vec.backward());
}

TEST_CASE("matmul hand values and transposed variant") {
    auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<double>::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
    auto c = pedro::matmul(a, b);
    CHECK(c.at(0, 0) == 58.0);
    CHECK(c.at(0, 1) == 64.0);
    CHECK(c.at(1, 0) == 139.0);
    CHECK(c.at(1, 1) == 154.0);

    // matmul_nt(a, bT) must equal matmul(a, b)
    auto bt = Tensor<double>::from_data({2, 3}, {7, 9, 11, 8, 10, 12});
    auto c2 = pedro::matmul_nt(a, bt);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(c2.at(i, j) == c.at(i, j));

    CHECK_THROWS(pedro::matmul(a, a));
}

TEST_CASE("gradcheck: linear map is exact to 1e-9") {
    auto w = Tensor<double>::from_data({4}, {0.5, -1.5, 2.0, 0.25}).set_requires_grad(true);
    auto x = Tensor<double>::from_data({4}, {1.0, 2.0, -3.0, 4.0});
    auto fn = [&]() { return pedro::sum(pedro::mul(w, x)); };
    const double err = pedro::grad_check<double>(fn, {w});
    CHECK(err <= 1e-9);
}

TEST_CASE("gradcheck: composite graph within 1e-4") {
    pedro::GaussianRng rng(42);
    auto X = Tensor<double>::randn({2, 4}, rng, 1.0);
    auto W1 = Tensor<double>::randn({4, 5}, rng, 0.7).set_requires_grad(true);
    auto b1 = Tensor<double>::randn({5}, rng, 0.3).set_requires_grad(true);
    auto gain = Tensor<double>::from_data({5}, {1.0, 0.9, 1.1, 1.2, 0.8}).set_requires_grad(true);
    auto W2 = Tensor<double>::randn({5, 3}, rng, 0.7).set_requires_grad(true);
    std::vector<int> targets = {0, 2};
    auto fn = [&]() {
        auto h = pedro::gelu(pedro::add_columns(pedro::matmul(X, W1), b1));
        auto n = pedro::rms_norm(h, gain, 1e-6);
        auto logits = pedro::matmul(n, W2);
        auto ce = pedro::cross_entropy_sum(logits, targets);
        return pedro::add(ce, pedro::scale(pedro::sum(pedro::mul(h, h)), 0.01));
    };
    const double err = pedro::grad_check<double>(fn, {W1, b1, gain, W2});
    CHECK(err <= 1e-4);
}

TEST_CASE("slicing and concatenation invert each other and route gradients") {
    pedro::GaussianRng rng(5);
    auto x = Tensor<double>::randn({3, 8}, rng, 1.0).set_requires_grad(true);
    std::vector<Tensor<double>> heads;
    for (int h = 0; h < 4; ++h) heads.push_back(pedro::slice_cols(x, 2 * h, 2));
    auto back = pedro::concat_cols(heads);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 8; ++j) CHECK(back.at(i, j) == x.at(i, j));

    auto fn = [&]() {
        std::vector<Tensor<double>> hs;
        for (int h = 0; h < 4; ++h) hs.push_back(pedro::slice_cols(x, 2 * h, 2));
        auto cc = pedro::concat_cols(hs);
        auto r = pedro::row(cc, 1);
        return pedro::add(pedro::sum(pedro::mul(r, r)), pedro::sum(cc));
    };
    CHECK(pedro::grad_check<double>(fn, {x}) <= 1e-6);

    CHECK_THROWS(pedro::slice_cols(x, 7, 3));
    CHECK_THROWS(pedro::slice_rows(x, 2, 2));
}

TEST_CASE("rotary preserves pair norms, is identity at position zero") {
    pedro::GaussianRng rng(9);
    auto x = Tensor<double>::randn({3, 8}, rng, 1.0);
    auto y = pedro::rotary(x, 2, 0);
    // first row rotated by angle 0 -> identical
    for (int j = 0; j < 8; ++j) CHECK(y.at(0, j) == doctest::Approx(x.at(0, j)).epsilon(1e-15));
    for (int i = 0; i < 3; ++i)
        for (int p = 0; p < 4; ++p) {
            const double n0 = x.at(i, 2 * p) * x.at(i, 2 * p) + x.at(i, 2 * p + 1) * x.at(i, 2 * p + 1);
            const double n1 = y.at(i, 2 * p) * y.at(i, 2 * p) + y.at(i, 2 * p + 1) * y.at(i, 2 * p + 1);
            CHECK(n1 == doctest::Approx(n0).epsilon(1e-12));
        }

    auto xp = Tensor<double>::randn({2, 8}, rng, 1.0).set_requires_grad(true);
    auto c = Tensor<double>::randn({2, 8}, rng, 1.0);
    auto fn = [&]() { return pedro::sum(pedro::mul(pedro::rotary(xp, 2, 3), c)); };
    CHECK(pedro::grad_check<double>(fn, {xp}) <= 1e-4);

    CHECK_THROWS(pedro::rotary(x, 3, 0));  // 8 % 3 != 0
}

TEST_CASE("causal softmax zeroes masked positions and normalizes the rest") {
    pedro::GaussianRng rng(11);
    auto s = Tensor<double>::randn({3, 3}, rng, 1.0);
    auto p = pedro::softmax_causal_rows(s, 0);
    CHECK(p.at(0, 1) == 0.0);
    CHECK(p.at(0, 2) == 0.0);
    CHECK(p.at(1, 2) == 0.0);
    CHECK(p.at(0, 0) == 1.0);
    for (int i = 0; i < 3; ++i) {
        double sumrow = 0;
        for (int j = 0; j <= i; ++j) sumrow += p.at(i, j);
        CHECK(sumrow == doctest::Approx(1.0).epsilon(1e-12));
    }

    // fully visible rows match plain softmax
    auto pfull = pedro::softmax_causal_rows(s, 10);
    auto pref = pedro::softmax(s, 1);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(pfull.at(i, j) == doctest::Approx(pref.at(i, j)).epsilon(1e-12));

    auto sp = Tensor<double>::randn({3, 3}, rng, 1.0).set_requires_grad(true);
    auto c = Tensor<double>::randn({3, 3}, rng, 1.0);
    auto fn = [&]() { return pedro::sum(pedro::mul(pedro::softmax_causal_rows(sp, 0), c)); };
    CHECK(pedro::grad_check<double>(fn, {sp}) <= 1e-4);
}

TEST_CASE("embedding gathers rows; duplicate ids accumulate gradient") {
    auto table =
        Tensor<double>::from_data({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7}).set_requires_grad(true);
    std::vector<int> ids = {1, 1, 3};
    auto e = pedro::embedding(table, ids);
    CHECK(e.at(0, 0) == 2.0);
    CHECK(e.at(1, 1) == 3.0);
    CHECK(e.at(2, 0) == 6.0);
    auto loss = pedro::sum(e);
    loss.backward();
    CHECK(table.grad()[2] == 2.0);   // row 1 hit twice
    CHECK(table.grad()[6] == 1.0);   // row 3 once
    CHECK(table.grad()[0] == 0.0);   // row 0 never
    CHECK_THROWS(pedro::embedding(table, std::vector<int>{4}));
    CHECK_THROWS(pedro::embedding(table, std::vector<int>{-1}));
}

TEST_CASE("rms norm matches a straight-line reference") {
    pedro::GaussianRng rng(21);
    auto x = Tensor<double>::randn({3, 4}, rng, 2.0).set_requires_grad(true);
    auto g = Tensor<double>::from_data({4}, {1.0, 0.5, 2.0, 1.5}).set_requires_grad(true);
    const double eps = 1e-6;
    auto y = pedro::rms_norm(x, g, eps);
    for (int i = 0; i < 3; ++i) {
        double ms = 0;
        for (int j = 0; j < 4; ++j) ms += x.at(i, j) * x.at(i, j);
        ms /= 4.0;
        const double inv = 1.0 / std::sqrt(ms + eps);
        for (int j = 0; j < 4; ++j)
            CHECK(y.at(i, j) == doctest::Approx(x.at(i, j) * inv * g.at(j)).epsilon(1e-12));
    }
    auto c = Tensor<double>::randn({3, 4}, rng, 1.0);
    auto fn = [&]() { return pedro::sum(pedro::mul(pedro::rms_norm(x, g, eps), c)); };
    CHECK(pedro::grad_check<double>(fn, {x, g}) <= 1e-4);
}

TEST_CASE("cross entropy closed forms and target masking") {
    auto logits = Tensor<double>::from_data({2, 2}, {0.0, 0.0, std::log(3.0), 0.0});
    std::vector<int> t01 = {0, 0};
    auto l = pedro::cross_entropy_sum(logits, t01);
    CHECK(l.item() == doctest::Approx(0.6931471805599453 + 0.2876820724517809).epsilon(1e-12));

    std::vector<int> masked = {-1, 0};
    auto l2 = pedro::cross_entropy_sum(logits, masked);
    CHECK(l2.item() == doctest::Approx(0.2876820724517809).epsilon(1e-12));

    std::vector<int> oob = {0, 2};
    CHECK_THROWS(pedro::cross_entropy_sum(logits, oob));

    // gradient of masked rows is exactly zero
    auto lp = logits.clone_detached().set_requires_grad(true);
    auto l3 = pedro::cross_entropy_sum(lp, masked);
    l3.backward();
    CHECK(lp.grad()[0] == 0.0);
    CHECK(lp.grad()[1] == 0.0);
    CHECK(lp.grad()[2] != 0.0);
}

TEST_CASE("row reductions: mean and max") {
    auto x = Tensor<double>::from_data({2, 3}, {1, 5, 3, 7, 2, 9});
    auto m = pedro::mean_rows(x);
    CHECK(m.at(0) == 4.0);
    CHECK(m.at(1) == 3.5);
    CHECK(m.at(2) == 6.0);
    auto mx = pedro::max_rows(x);
    CHECK(mx.at(0) == 7.0);
    CHECK(mx.at(1) == 5.0);
    CHECK(mx.at(2) == 9.0);

    auto xp = x.clone_detached().set_requires_grad(true);
    auto c = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0});
    auto fn = [&]() { return pedro::sum(pedro::mul(pedro::mean_rows(xp), c)); };
    CHECK(pedro::grad_check<double>(fn, {xp}) <= 1e-6);

    auto fnm = [&]() { return pedro::sum(pedro::mul(pedro::max_rows(xp), c)); };
    CHECK(pedro::grad_check<double>(fnm, {xp}) <= 1e-6);
}

TEST_CASE("adamw: closed-form first step and invariants") {
    // zero grad, zero weight decay -> parameter unchanged
    auto w = Tensor<double>::from_data({1}, {1.0}).set_requires_grad(true);
    w.grad();  // allocate zero grad
    pedro::AdamW<double> opt({w}, 0.1);
    opt.step();
    CHECK(w.at(0) == 1.0);

    // first step with grad 0.5 moves by ~lr
    auto w2 = Tensor<double>::from_data({1}, {1.0}).set_requires_grad(true);
    w2.grad()[0] = 0.5;
    pedro::AdamW<double> opt2({w2}, 0.1);
    opt2.step();
    CHECK(w2.at(0) == doctest::Approx(0.9).epsilon(1e-6));

    // lr = 0 is the identity even with gradients present
    auto w3 = Tensor<double>::from_data({2}, {1.0, -2.0}).set_requires_grad(true);
    w3.grad()[0] = 3.0;
    w3.grad()[1] = -4.0;
    pedro::AdamW<double> opt3({w3}, 0.0);
    opt3.step();
    CHECK(w3.at(0) == 1.0);
    CHECK(w3.at(1) == -2.0);

    // gradients are left untouched by step
    CHECK(w3.grad()[0] == 3.0);

    // missing grad -> error
    auto w4 = Tensor<double>::from_data({1}, {1.0}).set_requires_grad(true);
    pedro::AdamW<double> opt4({w4}, 0.1);
    CHECK_THROWS(opt4.step());

    // quadratic bowl: loss strictly decreases over 100 steps
    auto w5 = Tensor<double>::from_data({1}, {5.0}).set_requires_grad(true);
    pedro::AdamW<double> opt5({w5}, 0.01);
    double prev = 25.0;
    for (int s = 0; s < 100; ++s) {
        opt5.zero_grad();
        auto loss = pedro::sum(pedro::mul(w5, w5));
        loss.backward();
        opt5.step();
        const double cur = w5.at(0) * w5.at(0);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("deterministic rngs") {
    pedro::SplitMix64 a(77), b(77);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    pedro::SplitMix64 c(77);
    for (int i = 0; i < 1000; ++i) {
        const auto v = c.below(13);
        CHECK(v < 13);
    }

    pedro::GaussianRng g1(5), g2(5);
    for (int i = 0; i < 50; ++i) CHECK(g1.sample() == g2.sample());
    pedro::GaussianRng g3(6);
    double mean = 0, m2 = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double v = g3.sample();
        mean += v;
        m2 += v * v;
    }
    mean /= n;
    m2 /= n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(m2 - 1.0) < 0.03);
}

TEST_CASE("no-grad mode records nothing") {
    auto w = Tensor<double>::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
    {
        pedro::NoGradGuard ng;
        auto y = pedro::mul(w, w);
        CHECK_FALSE(y.requires_grad());
    }
    auto y2 = pedro::mul(w, w);
    CHECK(y2.requires_grad());
}
