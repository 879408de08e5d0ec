#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "lcs/gradcheck.hpp"
#include "lcs/graph.hpp"

using namespace lcs;

TEST_CASE("softmax of equal logits is uniform") {
    Tape t;
    const VarId x = t.constant(Tensor({1, 2}, {0.0, 0.0}));
    const Tensor& y = t.value(t.softmax_rows(x));
    CHECK(y[0] == 0.5);
    CHECK(y[1] == 0.5);
}

TEST_CASE("matmul by the identity returns the operand") {
    Tape t;
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.row(i)[i] = 1.0;
    const Tensor a({3, 2}, {1, 2, 3, 4, 5, 6});
    const Tensor& out = t.value(t.matmul(t.constant(eye), t.constant(a)));
    for (size_t i = 0; i < a.numel(); ++i) CHECK(out[i] == a[i]);
}

TEST_CASE("log softmax matches an extended-precision evaluation") {
    Tape t;
    const VarId x = t.constant(Tensor({1, 3}, {1.0, 2.0, 3.0}));
    const Tensor& got = t.value(t.log(t.softmax_rows(x)));
    long double z = 0.0L;
    for (double v : {1.0, 2.0, 3.0}) z += expl(static_cast<long double>(v));
    for (size_t j = 0; j < 3; ++j) {
        const long double want = static_cast<long double>(j + 1) - logl(z);
        CHECK(got[j] == doctest::Approx(static_cast<double>(want)).epsilon(1e-14));
    }
}

TEST_CASE("shape mismatch errors name the operation and both shapes") {
    Tape t;
    const VarId a = t.constant(Tensor({2, 3}));
    const VarId b = t.constant(Tensor({3, 3}));
    try {
        t.add(a, b);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[3,3]") != std::string::npos);
    }
}

TEST_CASE("non-finite leaf input is rejected") {
    Tape t;
    Tensor bad({2});
    bad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(t.leaf(bad), Error);
    bad[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(t.constant(bad), Error);
}

TEST_CASE("backward of sum(x*x) is 2x") {
    Tape t;
    const VarId x = t.leaf(Tensor({2}, {1.0, 2.0}));
    t.backward(t.sum(t.mul(x, x)));
    const Tensor g = t.grad(x);
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 4.0);
}

TEST_CASE("constant root yields all-zero gradients") {
    Tape t;
    const VarId x = t.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
    const VarId c = t.constant(Tensor::scalar(5.0));
    t.backward(t.sum(c));
    const Tensor g = t.grad(x);
    for (size_t i = 0; i < 3; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("disconnected leaf reads back a zero gradient, not an error") {
    Tape t;
    const VarId x = t.leaf(Tensor({2}, {1.0, 2.0}));
    const VarId y = t.leaf(Tensor({2}, {3.0, 4.0}));
    t.backward(t.sum(t.mul(x, x)));
    const Tensor gy = t.grad(y);
    CHECK(gy[0] == 0.0);
    CHECK(gy[1] == 0.0);
}

TEST_CASE("non-scalar backward root is an error") {
    Tape t;
    const VarId x = t.leaf(Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(t.backward(x), Error);
}

TEST_CASE("random three-layer composition matches central finite differences") {
    GradProblem p{
        "three_layer",
        [](Rng& r) {
            Tensor x({2, 4}), w1({4, 5}), w2({5, 3});
            for (size_t i = 0; i < x.numel(); ++i) x[i] = r.gaussian();
            for (size_t i = 0; i < w1.numel(); ++i) w1[i] = r.gaussian() * 0.5;
            for (size_t i = 0; i < w2.numel(); ++i) w2[i] = r.gaussian() * 0.5;
            return std::vector<Tensor>{x, w1, w2};
        },
        [](Tape& t, const std::vector<Tensor>& in) {
            const VarId x = t.leaf(in[0]), w1 = t.leaf(in[1]), w2 = t.leaf(in[2]);
            const VarId h1 = t.tanh(t.matmul(x, w1));
            const VarId h2 = t.tanh(t.matmul(h1, w2));
            return std::make_pair(t.mean(t.mul(h2, h2)), std::vector<VarId>{x, w1, w2});
        }};
    Rng rng(11);
    for (int i = 0; i < 10; ++i)
        CHECK(max_relative_grad_error(p, p.make_inputs(rng)) < 1e-4);
}

TEST_CASE("finite-difference agreement for every registered operation") {
    const auto results = run_gradient_suite(op_gradient_problems(), 2024, 25, 1e-4);
    for (const auto& r : results) {
        INFO(r.name << " max_rel_err=" << r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("backward is linear: grad(a*f + b*g) == a*grad(f) + b*grad(g)") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x({6});
        for (size_t i = 0; i < 6; ++i) x[i] = rng.gaussian();
        const double a = rng.gaussian(), b = rng.gaussian();

        auto f_root = [](Tape& t, VarId v) { return t.sum(t.tanh(v)); };
        auto g_root = [](Tape& t, VarId v) { return t.logsumexp_vec(v); };

        Tape t1;
        const VarId x1 = t1.leaf(x);
        t1.backward(t1.add(t1.scale(f_root(t1, x1), a), t1.scale(g_root(t1, x1), b)));
        const Tensor combined = t1.grad(x1);

        Tape t2;
        const VarId x2 = t2.leaf(x);
        t2.backward(f_root(t2, x2));
        const Tensor gf = t2.grad(x2);
        Tape t3;
        const VarId x3 = t3.leaf(x);
        t3.backward(g_root(t3, x3));
        const Tensor gg = t3.grad(x3);

        for (size_t i = 0; i < 6; ++i)
            CHECK(combined[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
    }
}

TEST_CASE("identical graph and inputs give bit-identical values and gradients") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor x({3, 4});
        for (size_t i = 0; i < x.numel(); ++i) x[i] = rng.gaussian();
        Tape t;
        const VarId v = t.leaf(x);
        const VarId root = t.mean(t.mul(t.softmax_rows(v), t.exp(t.scale(v, 0.1))));
        t.backward(root);
        return std::make_pair(t.value(root).item(), t.grad(v));
    };
    const auto [v1, g1] = run(99);
    const auto [v2, g2] = run(99);
    CHECK(v1 == v2);
    for (size_t i = 0; i < g1.numel(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("straight-through gumbel: forward one-hot, backward through the softmax") {
    Tensor g({4}, {0.1, 2.0, -1.0, 0.5});
    Tensor noise({4});  // zero noise: argmax is index 1
    Tape t;
    const VarId gv = t.leaf(g);
    const VarId q = t.gumbel_softmax(gv, 0.5, noise, true);
    const Tensor& qval = t.value(q);
    CHECK(qval[1] == 1.0);
    CHECK(qval[0] == 0.0);
    CHECK(qval[2] == 0.0);
    CHECK(qval[3] == 0.0);

    // backward equals the soft-path gradient of the same weighted sum
    Tensor w({4}, {0.3, -0.2, 0.9, 0.4});
    t.backward(t.sum(t.mul(q, t.constant(w))));
    const Tensor hard_grad = t.grad(gv);

    Tape t2;
    const VarId gv2 = t2.leaf(g);
    const VarId soft = t2.gumbel_softmax(gv2, 0.5, noise, false);
    t2.backward(t2.sum(t2.mul(soft, t2.constant(w))));
    const Tensor soft_grad = t2.grad(gv2);
    for (size_t i = 0; i < 4; ++i) CHECK(hard_grad[i] == soft_grad[i]);
}
