#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bridgegen/autograd.hpp"
#include "bridgegen/model.hpp"
#include "helpers.hpp"

using namespace bridgegen;
using oracle::random_tensor;

TEST_CASE("conv2d_same 1x1 identity") {
    Pcg32 rng(1);
    Tensor x = random_tensor({1, 4, 5, 1}, rng);
    Tensor k = Tensor::full({1, 1, 1, 1}, 1.0f);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d_same(x, k, b);
    CHECK(y.data == x.data);
}

TEST_CASE("conv2d_same delta response") {
    Tensor x = Tensor::zeros({1, 5, 5, 1});
    x.at4(0, 2, 2, 0) = 1.0f;
    Tensor y = conv2d_same(x, Tensor::full({3, 3, 1, 1}, 1.0f), Tensor::zeros({1}));
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) {
            const bool inside = std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1;
            CHECK(y.at4(0, r, c, 0) == (inside ? 1.0f : 0.0f));
        }
}

TEST_CASE("conv2d_same matches the naive loop oracle") {
    Pcg32 rng(2);
    Tensor x = random_tensor({1, 5, 7, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor got = conv2d_same(x, k, b);
    Tensor want = oracle::naive_conv2d_same(x, k, b);
    for (size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) <= 1e-5);
}

TEST_CASE("conv2d_same oracle agreement over 50 random shapes") {
    Pcg32 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = rng.uniform_int(1, 2), h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 7);
        const int ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 4);
        const int kh = 2 * rng.uniform_int(0, 2) + 1, kw = 2 * rng.uniform_int(0, 2) + 1;
        Tensor x = random_tensor({n, h, w, ci}, rng);
        Tensor k = random_tensor({kh, kw, ci, co}, rng);
        Tensor b = random_tensor({co}, rng);
        Tensor got = conv2d_same(x, k, b);
        Tensor want = oracle::naive_conv2d_same(x, k, b);
        for (size_t i = 0; i < got.data.size(); ++i)
            REQUIRE(std::abs(got.data[i] - want.data[i]) <= 1e-5);
    }
}

TEST_CASE("conv2d_same rejects bad shapes with named dims") {
    Tensor x = Tensor::zeros({1, 4, 4, 2});
    CHECK_THROWS_WITH_AS(conv2d_same(x, Tensor::zeros({2, 3, 2, 1}), Tensor::zeros({1})),
                         doctest::Contains("kernel rows must be odd"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(conv2d_same(x, Tensor::zeros({3, 3, 3, 1}), Tensor::zeros({1})),
                         doctest::Contains("input channels"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(conv2d_same(x, Tensor::zeros({3, 3, 2, 2}), Tensor::zeros({1})),
                         doctest::Contains("bias"), std::invalid_argument);
}

TEST_CASE("elementwise examples") {
    Tensor x({3}, {-1.0f, 0.0f, 2.0f});
    Tensor r = relu(x);
    CHECK(r.data == std::vector<float>{0.0f, 0.0f, 2.0f});

    Pcg32 rng(4);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor zero = Tensor::zeros({2, 3});
    CHECK(add(a, zero).data == a.data);

    Tensor twice_half = scale(scale(a, 2.0), 0.5);
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(std::abs(twice_half.data[i] - a.data[i]) <= 1e-7);

    CHECK_THROWS_AS(add(a, Tensor::zeros({2, 2})), std::invalid_argument);
    CHECK_THROWS_AS(mul(a, Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST_CASE("backward of sum(relu(x)) with positive x is all ones") {
    Pcg32 rng(5);
    Tensor x = random_tensor({2, 3}, rng, 0.1, 1.0);
    Tape tape;
    Val xv = tape.param("x", x);
    GradMap g = tape.backward(sum(relu(xv)));
    for (float v : g.at("x").data) CHECK(v == 1.0f);
}

TEST_CASE("unused parameter gets an exact zero gradient") {
    Pcg32 rng(6);
    Tape tape;
    Val used = tape.param("used", random_tensor({3}, rng));
    Val unused = tape.param("unused", random_tensor({4}, rng));
    (void)unused;
    GradMap g = tape.backward(sum(used));
    for (float v : g.at("unused").data) CHECK(v == 0.0f);
    for (float v : g.at("used").data) CHECK(v == 1.0f);
}

TEST_CASE("backward rejects a non-scalar loss") {
    Pcg32 rng(7);
    Tape tape;
    Val x = tape.param("x", random_tensor({3}, rng));
    Val y = relu(x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("conv kernel gradient matches central differences") {
    Pcg32 rng(8);
    const Tensor x = random_tensor({1, 4, 6, 2}, rng);
    ParamSet params;
    params["k"] = random_tensor({3, 3, 2, 3}, rng);
    params["b"] = random_tensor({3}, rng);

    Tape tape;
    Val loss = sum(conv2d_same(tape.input(x), tape.param("k", params["k"]), tape.param("b", params["b"])));
    GradMap analytic = tape.backward(loss);
    // f64 end to end so the difference quotient is not polluted by f32
    // rounding of intermediate activations
    auto f = [&](const ParamSet& p) {
        oracle::RefGrid in = oracle::RefGrid::zeros(4, 6, 2);
        for (int y = 0; y < 4; ++y)
            for (int c = 0; c < 6; ++c)
                for (int ch = 0; ch < 2; ++ch) in.at(y, c, ch) = x.at4(0, y, c, ch);
        const oracle::RefGrid out = oracle::ref_conv(in, p.at("k"), p.at("b"), 0);
        double total = 0.0;
        for (double v : out.v) total += v;
        return total;
    };
    GradMap fd = finite_diff_gradient(f, params, 1e-3);
    const auto cmp = oracle::compare_grads(analytic, fd);
    CHECK_MESSAGE(cmp.max_rel <= 1e-3, cmp.worst);
}

TEST_CASE("finite differences on closed-form cases") {
    ParamSet p;
    p["x"] = Tensor({1}, {3.0f});
    GradMap g = finite_diff_gradient(
        [](const ParamSet& q) {
            const double v = q.at("x").data[0];
            return v * v;
        },
        p, 1e-3);
    CHECK(std::abs(g.at("x").data[0] - 6.0) <= 1e-6);

    Pcg32 rng(9);
    ParamSet p2;
    p2["x"] = random_tensor({5}, rng);
    GradMap g2 = finite_diff_gradient([](const ParamSet& q) { return sum_f64(q.at("x")); }, p2, 1e-3);
    for (float v : g2.at("x").data) CHECK(std::abs(v - 1.0) <= 1e-6);

    CHECK_THROWS_AS(finite_diff_gradient([](const ParamSet&) { return 0.0; }, p, 0.0), std::invalid_argument);
}

TEST_CASE("backward agrees with finite differences on a two-layer masked conv stack") {
    using model::MaskKind;
    Pcg32 rng(10);
    const Tensor x = random_tensor({1, 5, 6, 1}, rng, 0.0, 1.0);
    ParamSet params;
    params["w1"] = random_tensor({3, 3, 1, 4}, rng);
    params["b1"] = random_tensor({4}, rng);
    params["w2"] = random_tensor({3, 3, 4, 2}, rng);
    params["b2"] = random_tensor({2}, rng);

    Tape tape;
    Val h = model::masked_conv(tape.input(x), tape.param("w1", params["w1"]), tape.param("b1", params["b1"]),
                               MaskKind::A);
    h = relu(h);
    h = model::masked_conv(h, tape.param("w2", params["w2"]), tape.param("b2", params["b2"]), MaskKind::B);
    GradMap analytic = tape.backward(sum(relu(h)));

    // independent f64 route for the same stack
    auto f = [&](const ParamSet& p) {
        oracle::RefGrid in = oracle::RefGrid::zeros(5, 6, 1);
        for (int y = 0; y < 5; ++y)
            for (int c = 0; c < 6; ++c) in.at(y, c, 0) = x.at4(0, y, c, 0);
        oracle::RefGrid a = oracle::ref_conv(in, p.at("w1"), p.at("b1"), 1);
        oracle::ref_relu(a);
        oracle::RefGrid b = oracle::ref_conv(a, p.at("w2"), p.at("b2"), 2);
        oracle::ref_relu(b);
        double total = 0.0;
        for (double v : b.v) total += v;
        return total;
    };
    GradMap fd = finite_diff_gradient(f, params, 1e-3);
    const auto cmp = oracle::compare_grads(analytic, fd);
    CHECK_MESSAGE(cmp.max_rel <= 1e-3, cmp.worst);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
    Pcg32 rng(11);
    const Tensor x = random_tensor({1, 4, 4, 2}, rng);
    const Tensor k = random_tensor({3, 3, 2, 2}, rng);
    const Tensor b = random_tensor({2}, rng);

    auto grads_for = [&](int which) {
        Tape tape;
        Val xv = tape.input(x);
        Val kv = tape.param("k", k);
        Val bv = tape.param("b", b);
        Val conv = conv2d_same(xv, kv, bv);
        Val la = sum(relu(conv));
        Val lb = scale(sum(conv), 0.5);
        Val loss = which == 0 ? la : which == 1 ? lb : add(la, lb);
        return tape.backward(loss);
    };
    GradMap ga = grads_for(0), gb = grads_for(1), gsum = grads_for(2);
    for (const auto& [name, g] : gsum)
        for (size_t i = 0; i < g.data.size(); ++i)
            CHECK(std::abs(static_cast<double>(g.data[i]) -
                           (static_cast<double>(ga.at(name).data[i]) + static_cast<double>(gb.at(name).data[i]))) <=
                  1e-6);
}

TEST_CASE("mul broadcasts over the trailing channel dim with correct gradients") {
    Pcg32 rng(12);
    const Tensor x = random_tensor({1, 2, 3, 4}, rng);
    const Tensor c = random_tensor({4}, rng);

    const Tensor prod = mul(x, c);
    for (int y = 0; y < 2; ++y)
        for (int col = 0; col < 3; ++col)
            for (int ch = 0; ch < 4; ++ch)
                CHECK(prod.at4(0, y, col, ch) ==
                      static_cast<float>(static_cast<double>(x.at4(0, y, col, ch)) *
                                         static_cast<double>(c.data[static_cast<size_t>(ch)])));

    Tape tape;
    Val xv = tape.param("x", x);
    Val cv = tape.param("c", c);
    GradMap g = tape.backward(sum(mul(xv, cv)));
    for (int ch = 0; ch < 4; ++ch) {
        double want = 0.0;
        for (int y = 0; y < 2; ++y)
            for (int col = 0; col < 3; ++col) want += static_cast<double>(x.at4(0, y, col, ch));
        CHECK(g.at("c").data[static_cast<size_t>(ch)] == doctest::Approx(want).epsilon(1e-6));
    }
    for (int y = 0; y < 2; ++y)
        for (int col = 0; col < 3; ++col)
            for (int ch = 0; ch < 4; ++ch)
                CHECK(g.at("x").at4(0, y, col, ch) == c.data[static_cast<size_t>(ch)]);
}

TEST_CASE("tensors validate their shape against the data") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({0}, {}), std::invalid_argument);
}
