#include "doctest.h"

#include <cmath>
#include <vector>

#include "relprox/rng.hpp"
#include "relprox/tensor.hpp"

using namespace relprox;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
    Tensor t = Tensor::zeros(shape, requires_grad);
    for (double& v : t.data()) v = rng.uniform(-2.0, 2.0);
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("softmax of equal scores is uniform") {
    Tensor x = Tensor::from({2}, {0.0, 0.0});
    Tensor y = softmax(x);
    CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.data()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("relu clamps negatives") {
    Tensor x = Tensor::from({2}, {-1.0, 2.0});
    Tensor y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 2.0);
}

TEST_CASE("matmul by identity returns the input") {
    Rng rng(11);
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor a = random_tensor({3, 3}, rng, false);
    Tensor y = matmul(eye, a);
    for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == a.data()[i]);
}

TEST_CASE("matmul rejects mismatched shapes with both shapes in the message") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL("expected shape_mismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::shape_mismatch);
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("backward of sum of squares") {
    Tape tape;
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor root = sum_all(mul(x, x));
    tape.backward(root);
    CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("backward of mean of relu") {
    Tape tape;
    Tensor x = Tensor::from({2}, {-1.0, 3.0}, true);
    Tensor root = mean(relu(x), 0);
    tape.backward(root);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar root and stale tapes") {
    Tape tape;
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), Error);
    Tensor root = sum_all(y);
    tape.backward(root);
    CHECK_THROWS_AS(tape.backward(root), Error);  // consumed tape
    // Root from a different (already destroyed) tape context:
    Tensor detached = root.detach();
    CHECK_THROWS_AS(tape.backward(detached), Error);
}

TEST_CASE("gradients of unused parameters are exactly zero") {
    Tape tape;
    Tensor used = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor unused = Tensor::from({2}, {5.0, 5.0}, true);
    Tensor root = sum_all(mul(used, used));
    tape.backward(root);
    CHECK(unused.grad()[0] == 0.0);
    CHECK(unused.grad()[1] == 0.0);
}

TEST_CASE("random three-layer composition matches finite differences") {
    Rng rng(7);
    Tensor w1 = random_tensor({4, 3}, rng);
    Tensor b1 = random_tensor({4}, rng);
    Tensor w2 = random_tensor({3, 4}, rng);
    Tensor w3 = random_tensor({1, 3}, rng);
    Tensor x = random_tensor({3}, rng, false);
    auto fn = [&] {
        Tensor h1 = relu(add(matmul(w1, x), b1));
        Tensor h2 = relu(matmul(w2, h1));
        Tensor out = matmul(w3, h2);
        return reshape(sum_all(exp(scale(out, 0.3))), {1});
    };
    double err = grad_check(fn, {w1, b1, w2, w3}, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("grad_check on a quadratic form is tight") {
    Rng rng(3);
    Tensor a = random_tensor({3, 3}, rng, false);
    Tensor x = random_tensor({3}, rng);
    auto fn = [&] { return dot(x, matmul(a, x)); };
    double err = grad_check(fn, {x}, 1e-5);
    CHECK(err < 1e-8);
}

TEST_CASE("grad_check on a constant function is exactly zero") {
    Tensor x = Tensor::from({2}, {1.0, -1.0}, true);
    auto fn = [&] { return scale(Tensor::scalar(4.0), 1.0); };
    CHECK(grad_check(fn, {x}, 1e-5) == 0.0);
}

TEST_CASE("grad_check reports the offending primitive on non-finite values") {
    Tensor x = Tensor::from({1}, {-1.0}, true);
    auto fn = [&] { return log(x); };
    try {
        grad_check(fn, {x}, 1e-5);
        FAIL("expected non_finite");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::non_finite);
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
}

TEST_CASE("every primitive matches central finite differences at random inputs") {
    // Each primitive is wrapped into a scalar through a fixed random
    // projection so the full Jacobian action is exercised.
    Rng rng(42);
    auto check = [&](const char* name, const std::function<Tensor()>& fn,
                     const std::vector<Tensor>& params) {
        double err = grad_check(fn, params, 1e-5);
        INFO(name);
        CHECK(err < 1e-6);
    };

    for (int trial = 0; trial < 3; ++trial) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        Tensor c = random_tensor({3, 4}, rng);
        Tensor bias = random_tensor({4}, rng);
        Tensor u = random_tensor({5}, rng);
        Tensor v = random_tensor({3}, rng);
        Tensor pos = Tensor::zeros({4}, true);
        for (double& x : pos.data()) x = rng.uniform(0.5, 2.5);
        // Fixed projections; drawing them inside the lambdas would change the
        // function between finite-difference probes.
        Tensor p32 = random_tensor({3, 2}, rng, false);
        Tensor p34 = random_tensor({3, 4}, rng, false);
        Tensor p43 = random_tensor({4, 3}, rng, false);
        Tensor p8 = random_tensor({8}, rng, false);
        Tensor p5 = random_tensor({5}, rng, false);
        Tensor p4 = random_tensor({4}, rng, false);
        Tensor p3 = random_tensor({3}, rng, false);

        check("matmul", [&] { return sum_all(mul(matmul(a, b), p32)); }, {a, b});
        check("add", [&] { return sum_all(mul(add(a, c), p34)); }, {a, c});
        check("add_bias_row", [&] { return sum_all(mul(add(a, bias), p34)); }, {a, bias});
        check("sub", [&] { return sum_all(mul(sub(a, c), p34)); }, {a, c});
        check("mul", [&] { return sum_all(mul(mul(a, c), p34)); }, {a, c});
        check("scale", [&] { return sum_all(scale(a, -1.7)); }, {a});
        check("concat", [&] { return sum_all(mul(concat(u, v), p8)); }, {u, v});
        check("stack_rows_row",
              [&] {
                  Tensor m = stack_rows({u, relu(u), scale(u, 0.5)});
                  return sum_all(mul(row(m, 1), p5));
              },
              {u});
        check("relu", [&] { return sum_all(mul(relu(a), p34)); }, {a});
        check("exp", [&] { return sum_all(mul(exp(scale(a, 0.5)), p34)); }, {a});
        check("log", [&] { return sum_all(mul(log(pos), p4)); }, {pos});
        check("sqrt", [&] { return sum_all(mul(sqrt(pos), p4)); }, {pos});
        check("softmax", [&] { return sum_all(mul(softmax(a), p34)); }, {a});
        check("mean0", [&] { return sum_all(mul(mean(a, 0), p4)); }, {a});
        check("mean1", [&] { return sum_all(mul(mean(a, 1), p3)); }, {a});
        check("l2_normalize", [&] { return sum_all(mul(l2_normalize(u), p5)); }, {u});
        check("transpose", [&] { return sum_all(mul(transpose(a), p43)); }, {a});
        check("reshape", [&] { return sum_all(mul(reshape(a, {4, 3}), p43)); }, {a});

        Tensor img = random_tensor({2, 6, 6}, rng);
        Tensor ker = random_tensor({3, 2, 3, 3}, rng);
        Tensor kb = random_tensor({3}, rng);
        Tensor p322 = random_tensor({3, 2, 2}, rng, false);
        check("conv2d", [&] { return sum_all(mul(conv2d(img, ker, kb, 2), p322)); },
              {img, ker, kb});
    }
}

TEST_CASE("adjoint is linear: backward(a*f + b*g) == a*backward(f) + b*backward(g)") {
    Rng rng(99);
    Tensor x = random_tensor({4}, rng);
    Tensor m = random_tensor({4, 4}, rng, false);
    auto f = [&] { return dot(x, matmul(m, x)); };
    auto g = [&] { return sum_all(exp(scale(x, 0.4))); };
    const double ca = 1.7, cb = -0.6;

    std::vector<double> gf, gg, gmix;
    {
        Tape tape;
        tape.backward(f());
        auto gr = x.grad();
        gf.assign(gr.begin(), gr.end());
    }
    x.zero_grad();
    {
        Tape tape;
        tape.backward(g());
        auto gr = x.grad();
        gg.assign(gr.begin(), gr.end());
    }
    x.zero_grad();
    {
        Tape tape;
        tape.backward(add(scale(f(), ca), scale(g(), cb)));
        auto gr = x.grad();
        gmix.assign(gr.begin(), gr.end());
    }
    for (size_t i = 0; i < gf.size(); ++i)
        CHECK(gmix[i] == doctest::Approx(ca * gf[i] + cb * gg[i]).epsilon(1e-12));
}

TEST_CASE("forward results are bitwise deterministic") {
    auto run = [] {
        Rng rng(1234);
        Tensor a = random_tensor({4, 4}, rng, false);
        Tensor b = random_tensor({4, 4}, rng, false);
        Tensor y = softmax(matmul(relu(a), transpose(b)));
        return std::vector<double>(y.data().begin(), y.data().end());
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1 == r2);
}

TEST_SUITE_END();
