#include <doctest.h>

#include <cmath>

#include "invflow/layers.hpp"
#include "layer_checks.hpp"
#include "oracles.hpp"

using namespace invflow;

TEST_CASE("actnorm with unit scale and zero bias is the identity") {
    ActNorm a(3);
    a.mark_initialized();
    oracle::Gen g(1);
    const Tensor x = g.image({2, 3, 3});
    Real ld = 0;
    CHECK(a.forward(x, ld) == x);
    CHECK(ld == 0);
}

TEST_CASE("actnorm requires initialization") {
    ActNorm a(2);
    Real ld = 0;
    CHECK_THROWS_AS(a.forward(Tensor(Shape{1, 1, 2}), ld), std::logic_error);
    CHECK_THROWS_AS(a.inverse(Tensor(Shape{1, 1, 2})), std::logic_error);
    CHECK_THROWS_AS(a.set_scale(0, 0), std::invalid_argument);
}

TEST_CASE("actnorm data init normalizes the batch") {
    oracle::Gen g(2);
    std::vector<Tensor> batch;
    for (int n = 0; n < 16; ++n) {
        Tensor t = g.image({4, 4, 2}, 2);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) t(i, j, 0) += 3;  // channel 0: mean 3, std 2
        batch.push_back(t);
    }
    ActNorm a(2);
    a.initialize(batch);
    CHECK(a.initialized());
    for (int c = 0; c < 2; ++c) {
        Real s = 0, s2 = 0, n = 0;
        for (const auto& x : batch) {
            Real ld = 0;
            const Tensor y = a.forward(x, ld);
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    s += y(i, j, c);
                    s2 += y(i, j, c) * y(i, j, c);
                    n += 1;
                }
        }
        const Real mean = s / n;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(s2 / n - mean * mean - 1) < 1e-6);
    }
}

TEST_CASE("actnorm logdet formula") {
    ActNorm a(2);
    a.mark_initialized();
    a.set_scale(0, 2);
    a.set_scale(1, -2);
    Real ld = 0;
    a.forward(Tensor(Shape{4, 4, 2}), ld);
    CHECK(ld == doctest::Approx(16 * 2 * std::log(2.0)));
}

TEST_CASE("conv1x1") {
    Conv1x1 id(3);
    oracle::Gen g(3);
    const Tensor x = g.image({2, 2, 3});
    Real ld = 0;
    CHECK(id.forward(x, ld) == x);
    CHECK(ld == 0);

    Conv1x1 rot(2);
    const Real th = 0.7;
    rot.matrix()[0] = std::cos(th);
    rot.matrix()[1] = -std::sin(th);
    rot.matrix()[2] = std::sin(th);
    rot.matrix()[3] = std::cos(th);
    ld = 0;
    rot.forward(g.image({3, 3, 2}), ld);
    CHECK(std::abs(ld) < 1e-12);

    Conv1x1 r(3, g.rng);
    r.randomize(g.rng, 0.3);
    const Tensor x3 = g.image({3, 3, 3});
    const auto J = oracle::fd_jacobian([&](const Tensor& t) {
        Real d = 0;
        return r.forward(t, d);
    }, x3);
    ld = 0;
    r.forward(x3, ld);
    CHECK(ld == doctest::Approx(oracle::log_abs_det(J)).epsilon(1e-9));

    Conv1x1 sing(2);
    for (Real& w : sing.matrix()) w = 1;
    CHECK_THROWS(sing.inverse(g.image({1, 1, 2})));
}

TEST_CASE("squeeze ordering and inverse") {
    const Tensor x(Shape{2, 2, 1}, {1, 2, 3, 4});
    const Tensor y = squeeze(x);
    CHECK(y == Tensor(Shape{1, 1, 4}, {1, 2, 3, 4}));

    oracle::Gen g(4);
    const Tensor z = g.image({4, 6, 3});
    const Tensor s = squeeze(z);
    CHECK(s.shape() == Shape{2, 3, 12});
    CHECK(s(1, 2, 4 * 1 + 3) == z(3, 5, 1));
    CHECK(s(0, 1, 4 * 2 + 1) == z(0, 3, 2));
    CHECK(unsqueeze(s) == z);
    CHECK(norm(s) == doctest::Approx(norm(z)));
    CHECK_THROWS_AS(squeeze(g.image({3, 2, 1})), std::invalid_argument);
}

TEST_CASE("invconv layer starts near identity with exact logdet 0") {
    oracle::Gen g(5);
    InvConvLayer l(3, 4, g.rng);
    Real ld = 0;
    l.forward(g.image({3, 3, 4}), ld);
    CHECK(ld == 0);
    CHECK(l.min_diagonal_magnitude() == 1);
    CHECK(l.kernel().satisfies_mask());
}

TEST_CASE("invconv logdet derivative in the log-magnitudes is H*W") {
    oracle::Gen g(6);
    InvConvLayer l(3, 2, g.rng);
    l.randomize(g.rng, 0.2);
    std::vector<Real> grad(l.parameter_count(), 0);
    const Tensor x = g.image({3, 5, 2});
    l.backward(x, Tensor(x.shape()), 1, grad);
    const std::size_t nfree = free_weight_count(3, 2);
    for (std::size_t q = 0; q < nfree; ++q) CHECK(grad[q] == 0);
    CHECK(grad[nfree] == doctest::Approx(15));
    CHECK(grad[nfree + 1] == doctest::Approx(15));
}

TEST_CASE("every layer: round trip, logdet against finite differences, gradients") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        oracle::Gen g(100 + seed);
        CAPTURE(seed);

        ActNorm a(2);
        a.randomize(g.rng, 0.5);
        a.mark_initialized();
        const Tensor xa = g.image({2, 3, 2});
        layer_checks::check_round_trip(a, xa, g);
        layer_checks::check_logdet(a, xa);
        layer_checks::check_gradients(a, xa, g);

        Conv1x1 c(3, g.rng);
        c.randomize(g.rng, 0.3);
        const Tensor xc = g.image({2, 2, 3});
        layer_checks::check_round_trip(c, xc, g);
        layer_checks::check_logdet(c, xc);
        layer_checks::check_gradients(c, xc, g);

        InvConvLayer ic(3, 2, g.rng);
        ic.randomize(g.rng, 0.3);
        const Tensor xi = g.image({3, 4, 2});
        layer_checks::check_round_trip(ic, xi, g);
        layer_checks::check_logdet(ic, xi);
        layer_checks::check_gradients(ic, xi, g);

        Squeeze sq;
        const Tensor xs = g.image({2, 4, 2});
        layer_checks::check_round_trip(sq, xs, g);
        layer_checks::check_logdet(sq, xs);
        layer_checks::check_gradients(sq, xs, g);
    }
}

TEST_CASE("layer state round trip") {
    oracle::Gen g(7);
    InvConvLayer l(3, 3, g.rng);
    l.randomize(g.rng, 0.3);
    InvConvLayer other(3, 3, g.rng);
    other.set_state(l.state());
    const Tensor x = g.image({3, 3, 3});
    Real a = 0, b = 0;
    CHECK(l.forward(x, a) == other.forward(x, b));
    CHECK(a == b);

    ActNorm n(2);
    n.randomize(g.rng, 0.4);
    n.mark_initialized();
    ActNorm m(2);
    m.set_state(n.state());
    CHECK(m.initialized());
    CHECK(m.scale(1) == n.scale(1));
}
