#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sept/tensor.hpp"
#include "testutil.hpp"

using namespace sept;

namespace {

Tensor64 random_tensor(std::vector<int64_t> shape, Rng& rng, bool requires_grad = false,
                       double scale = 1.0) {
    std::vector<double> data(static_cast<size_t>(Tensor64::shape_numel(shape)));
    for (double& v : data) v = rng.normal() * scale;
    return Tensor64(std::move(shape), std::move(data), requires_grad);
}

std::vector<double> random_probs(int64_t n, Rng& rng) {
    std::vector<double> p(static_cast<size_t>(n));
    double sum = 0.0;
    for (double& v : p) {
        v = rng.uniform() + 1e-4;
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

}  // namespace

TEST_CASE("matmul identity case") {
    Tensor a({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    Tensor b({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    Tensor c = matmul(a, b);
    CHECK(c.data() == std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});
}

TEST_CASE("matmul gradient with identity right factor") {
    Tensor64 a({2, 2}, {1, 2, 3, 4}, true);
    Tensor64 b({2, 2}, {1, 0, 0, 1});
    Tensor64 c = matmul(a, b);
    Tensor64 loss = sum_all(c);  // upstream all-ones grad on c
    backward(loss);
    for (double g : a.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("matmul against triple-loop oracle") {
    Rng rng(7);
    Tensor64 a = random_tensor({3, 4}, rng);
    Tensor64 b = random_tensor({4, 2}, rng);
    Tensor64 c = matmul(a, b);
    std::vector<double> want = testutil::matmul_oracle(a.data(), b.data(), 3, 4, 2);
    for (size_t i = 0; i < want.size(); ++i) {
        CHECK(std::abs(c.data()[i] - want[i]) <= 1e-6);
    }
}

TEST_CASE("batched matmul matches per-slice products") {
    Rng rng(8);
    Tensor64 a = random_tensor({2, 3, 4}, rng);
    Tensor64 b = random_tensor({2, 4, 5}, rng);
    Tensor64 c = matmul(a, b);
    for (int64_t s = 0; s < 2; ++s) {
        std::vector<double> as(a.data().begin() + s * 12, a.data().begin() + (s + 1) * 12);
        std::vector<double> bs(b.data().begin() + s * 20, b.data().begin() + (s + 1) * 20);
        std::vector<double> want = testutil::matmul_oracle(as, bs, 3, 4, 5);
        for (size_t i = 0; i < want.size(); ++i) {
            CHECK(c.data()[static_cast<size_t>(s * 15) + i] == doctest::Approx(want[i]));
        }
    }
}

TEST_CASE("matmul_nt equals matmul with transposed factor") {
    Rng rng(9);
    Tensor64 a = random_tensor({3, 4}, rng);
    Tensor64 b = random_tensor({5, 4}, rng);
    Tensor64 c1 = matmul_nt(a, b);
    Tensor64 c2 = matmul(a, transpose2d(b));
    for (size_t i = 0; i < c1.data().size(); ++i) {
        CHECK(c1.data()[i] == doctest::Approx(c2.data()[i]));
    }
}

TEST_CASE("matmul rejects shape mismatch") {
    Tensor a({2, 3});
    Tensor b({2, 3});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("softmax uniform logits") {
    Tensor x({1, 4}, {0.0f, 0.0f, 0.0f, 0.0f});
    Tensor y = softmax_rows(x);
    for (float v : y.data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("softmax max-shift stability") {
    Tensor x({1, 2}, {1000.0f, 0.0f});
    Tensor y = softmax_rows(x);
    CHECK(y.data()[0] == doctest::Approx(1.0));
    CHECK(y.data()[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(y.data()[0]));
}

TEST_CASE("softmax against 64-bit oracle and row-sum invariant") {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        int64_t cols = 2 + rng.uniform_int(64);
        Tensor64 x = random_tensor({3, cols}, rng, false, 5.0);
        Tensor64 y = softmax_rows(x);
        for (int64_t r = 0; r < 3; ++r) {
            double mx = x.data()[static_cast<size_t>(r * cols)];
            for (int64_t j = 1; j < cols; ++j) {
                mx = std::max(mx, x.data()[static_cast<size_t>(r * cols + j)]);
            }
            double sum = 0.0;
            for (int64_t j = 0; j < cols; ++j) {
                sum += std::exp(x.data()[static_cast<size_t>(r * cols + j)] - mx);
            }
            double row_sum = 0.0;
            for (int64_t j = 0; j < cols; ++j) {
                double want = std::exp(x.data()[static_cast<size_t>(r * cols + j)] - mx) / sum;
                CHECK(std::abs(y.data()[static_cast<size_t>(r * cols + j)] - want) <= 1e-6);
                row_sum += y.data()[static_cast<size_t>(r * cols + j)];
            }
            CHECK(std::abs(row_sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("softmax rejects non-finite input") {
    Tensor x({1, 2}, {std::numeric_limits<float>::quiet_NaN(), 0.0f});
    CHECK_THROWS_AS(softmax_rows(x), NumericError);
}

TEST_CASE("cross entropy matching one-hot") {
    const double eps = 0.01;
    int64_t v = 5;
    std::vector<double> target(v, 0.0);
    target[2] = 1.0;
    std::vector<double> pred(v, eps / static_cast<double>(v - 1));
    pred[2] = 1.0 - eps;
    Tensor64 t({v}, target);
    Tensor64 p({v}, pred);
    CHECK(cross_entropy(t, p).item() == doctest::Approx(-std::log(1.0 - eps)));
}

TEST_CASE("cross entropy of uniform pair is ln V") {
    Tensor64 t({4}, std::vector<double>(4, 0.25));
    Tensor64 p({4}, std::vector<double>(4, 0.25));
    CHECK(cross_entropy(t, p).item() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("cross entropy against 64-bit oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        int64_t v = 3 + rng.uniform_int(40);
        std::vector<double> target = random_probs(v, rng);
        std::vector<double> pred = random_probs(v, rng);
        double want = 0.0;
        for (int64_t j = 0; j < v; ++j) {
            want -= target[static_cast<size_t>(j)] * std::log(pred[static_cast<size_t>(j)]);
        }
        Tensor64 t({v}, target);
        Tensor64 p({v}, pred);
        CHECK(std::abs(cross_entropy(t, p).item() - want) <= 1e-9);
    }
}

TEST_CASE("cross entropy rejects length mismatch") {
    Tensor64 t({3}, {1.0, 0.0, 0.0});
    Tensor64 p({4}, std::vector<double>(4, 0.25));
    CHECK_THROWS_AS(cross_entropy(t, p), DimensionError);
}

TEST_CASE("layer norm constant row uses the epsilon branch") {
    Tensor64 x({1, 4}, std::vector<double>(4, 3.5));
    Tensor64 gain({4}, std::vector<double>(4, 1.0));
    Tensor64 bias({4}, std::vector<double>(4, 0.0));
    Tensor64 y = layer_norm(x, gain, bias);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("layer norm symmetric pair") {
    Tensor64 x({1, 2}, {1.0, -1.0});
    Tensor64 gain({2}, {1.0, 1.0});
    Tensor64 bias({2}, {0.0, 0.0});
    Tensor64 y = layer_norm(x, gain, bias);
    CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y.data()[1] == doctest::Approx(-1.0).epsilon(1e-4));
}

namespace {

// FD check for a scalar graph built from (x, gain, bias) leaves
template <typename BuildFn>
void check_gradients(std::vector<Tensor64*> leaves, BuildFn&& build, double h = 1e-5) {
    Tensor64 loss = build();
    backward(loss);
    for (Tensor64* leaf : leaves) {
        std::vector<double> analytic = leaf->grad();
        for (size_t i = 0; i < leaf->data().size(); ++i) {
            double fd = testutil::finite_difference(leaf->data(), i, h, [&]() {
                NoGradGuard ng;
                return build().item();
            });
            if (std::abs(fd) < 1e-10 && std::abs(analytic[i]) < 1e-10) continue;
            CHECK(testutil::relative_error(analytic[i], fd) <= 1e-3);
        }
    }
}

}  // namespace

TEST_CASE("layer norm gradient vs finite differences") {
    Rng rng(12);
    Tensor64 x = random_tensor({3, 6}, rng, true);
    Tensor64 gain = random_tensor({6}, rng, true, 0.5);
    Tensor64 bias = random_tensor({6}, rng, true, 0.5);
    Tensor64 w = random_tensor({3, 6}, rng);
    check_gradients({&x, &gain, &bias},
                    [&]() { return sum_all(mul(layer_norm(x, gain, bias), w)); });
}

TEST_CASE("gelu gradient vs finite differences") {
    Rng rng(13);
    Tensor64 x = random_tensor({2, 5}, rng, true);
    Tensor64 w = random_tensor({2, 5}, rng);
    check_gradients({&x}, [&]() { return sum_all(mul(gelu(x), w)); });
}

TEST_CASE("add, mul, add_bias, scale gradients vs finite differences") {
    Rng rng(14);
    Tensor64 a = random_tensor({2, 4}, rng, true);
    Tensor64 b = random_tensor({2, 4}, rng, true);
    Tensor64 bias = random_tensor({4}, rng, true);
    check_gradients({&a, &b, &bias},
                    [&]() { return sum_all(scale(mul(add_bias(add(a, b), bias), a), 0.7)); });
}

TEST_CASE("matmul and matmul_nt gradients vs finite differences") {
    Rng rng(15);
    Tensor64 a = random_tensor({3, 4}, rng, true);
    Tensor64 b = random_tensor({4, 2}, rng, true);
    Tensor64 c = random_tensor({5, 2}, rng, true);
    check_gradients({&a, &b, &c}, [&]() { return sum_all(matmul_nt(matmul(a, b), c)); });
}

TEST_CASE("backward of x*x at 3 gives 6") {
    Tensor64 x({1}, {3.0}, true);
    Tensor64 f = sum_all(mul(x, x));
    backward(f);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("softmax + cross entropy composite vs finite differences") {
    Rng rng(16);
    Tensor64 logits = random_tensor({1, 5}, rng, true);
    std::vector<double> target = random_probs(5, rng);
    Tensor64 t({5}, target);
    auto build = [&]() {
        Tensor64 p = softmax_rows(logits);
        return cross_entropy(t, reshape(p, {5}));
    };
    check_gradients({&logits}, build);
}

TEST_CASE("disconnected parameter keeps exactly zero gradient") {
    Tensor64 x({1}, {2.0}, true);
    Tensor64 unused({3}, {1.0, 2.0, 3.0}, true);
    Tensor64 f = sum_all(mul(x, x));
    backward(f);
    for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("repeated backward on the same root is rejected") {
    Tensor64 x({1}, {2.0}, true);
    Tensor64 f = sum_all(mul(x, x));
    backward(f);
    CHECK_THROWS_AS(backward(f), UsageError);
}

TEST_CASE("backward rejects non-scalar roots") {
    Tensor64 x({2}, {1.0, 2.0}, true);
    Tensor64 f = mul(x, x);
    CHECK_THROWS_AS(backward(f), UsageError);
}

TEST_CASE("gradient accumulation is linear") {
    Rng rng(17);
    // grads of f and g accumulated separately equal grads of f+g
    Tensor64 x1 = random_tensor({4}, rng, true);
    Tensor64 x2(x1.shape(), x1.data(), true);
    Tensor64 w1 = random_tensor({4}, rng);
    Tensor64 w2 = random_tensor({4}, rng);

    Tensor64 f = sum_all(mul(x1, w1));
    backward(f);
    Tensor64 g = sum_all(mul(mul(x1, x1), w2));
    backward(g);

    Tensor64 fg = add(sum_all(mul(x2, w1)), sum_all(mul(mul(x2, x2), w2)));
    Tensor64 total = sum_all(fg);
    backward(total);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(x1.grad()[i] == doctest::Approx(x2.grad()[i]).epsilon(1e-12));
    }
}

TEST_CASE("embedding gather forward and scatter-add backward") {
    Tensor64 table({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}, true);
    std::vector<int32_t> ids = {2, 0, 2};
    Tensor64 rows = embedding_gather(table, ids);
    CHECK(rows.data() == std::vector<double>{5.0, 6.0, 1.0, 2.0, 5.0, 6.0});
    Tensor64 loss = sum_all(rows);
    backward(loss);
    // row 2 referenced twice, row 1 never
    CHECK(table.grad() == std::vector<double>{1.0, 1.0, 0.0, 0.0, 2.0, 2.0});
    CHECK_THROWS_AS(embedding_gather(table, std::vector<int32_t>{3}), UsageError);
}

TEST_CASE("dropout semantics") {
    Rng rng(18);
    Tensor64 x({1, 1000}, std::vector<double>(1000, 1.0), true);

    SUBCASE("rate zero is the identity") {
        Rng r2(1);
        Tensor64 y = dropout(x, 0.0, r2);
        CHECK(y.node() == x.node());
    }
    SUBCASE("kept entries are scaled, dropped are zero") {
        Rng r2(2);
        Tensor64 y = dropout(x, 0.25, r2);
        int64_t kept = 0;
        for (double v : y.data()) {
            if (v != 0.0) {
                CHECK(v == doctest::Approx(1.0 / 0.75));
                ++kept;
            }
        }
        CHECK(kept > 600);
        CHECK(kept < 900);
        // backward passes the same mask
        Tensor64 loss = sum_all(y);
        backward(loss);
        for (size_t i = 0; i < 1000; ++i) {
            CHECK(x.grad()[i] == doctest::Approx(y.data()[i]));
        }
    }
    SUBCASE("seeded draws are deterministic") {
        Rng ra(3), rb(3);
        Tensor64 ya = dropout(x, 0.5, ra);
        Tensor64 yb = dropout(x, 0.5, rb);
        CHECK(ya.data() == yb.data());
    }
    SUBCASE("rate一1 rejected") {
        Rng r2(4);
        CHECK_THROWS_AS(dropout(x, 1.0, r2), UsageError);
    }
}

TEST_CASE("transpose roundtrip and reshape guards") {
    Rng rng(19);
    Tensor64 x = random_tensor({2, 3, 4, 5}, rng, true);
    Tensor64 y = transpose(x, {0, 2, 1, 3});
    Tensor64 z = transpose(y, {0, 2, 1, 3});
    CHECK(z.data() == x.data());
    CHECK_THROWS_AS(reshape(x, {7, 3}), DimensionError);
    CHECK_THROWS_AS(transpose(x, {0, 1, 2, 2}), DimensionError);

    Tensor64 w = random_tensor({2, 3, 4, 5}, rng);
    check_gradients({&x}, [&]() { return sum_all(mul(transpose(x, {3, 1, 0, 2}),
                                                     transpose(w, {3, 1, 0, 2}))); });
}

TEST_CASE("cross_entropy_rows_mean matches per-row cross_entropy") {
    Rng rng(20);
    int64_t m = 4, v = 12;
    std::vector<double> tdata, pdata;
    for (int64_t i = 0; i < m; ++i) {
        for (double x : random_probs(v, rng)) tdata.push_back(x);
        for (double x : random_probs(v, rng)) pdata.push_back(x);
    }
    Tensor64 t({m, v}, tdata);
    Tensor64 p({m, v}, pdata);
    double mean = cross_entropy_rows_mean(t, p).item();
    double want = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        std::vector<double> ti(tdata.begin() + i * v, tdata.begin() + (i + 1) * v);
        std::vector<double> pi(pdata.begin() + i * v, pdata.begin() + (i + 1) * v);
        want += cross_entropy(Tensor64({v}, ti), Tensor64({v}, pi)).item();
    }
    want /= static_cast<double>(m);
    CHECK(std::abs(mean - want) <= 1e-12);
}
