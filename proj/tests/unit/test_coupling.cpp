#include <doctest.h>

#include <cmath>

#include "invflow/coupling.hpp"
#include "layer_checks.hpp"
#include "oracles.hpp"

using namespace invflow;

TEST_CASE("zero-initialized couplings are the identity") {
    oracle::Gen g(1);
    AffineCoupling a(4, 8, 2, g.rng);
    QuadCoupling q(8, 8, 2, g.rng);
    const Tensor x4 = g.image({3, 3, 4}), x8 = g.image({3, 3, 8});
    Real ld = 0;
    CHECK(a.forward(x4, ld) == x4);
    CHECK(q.forward(x8, ld) == x8);
    CHECK(ld == 0);
    CHECK(a.kind() == "affine_coupling");
    CHECK(q.kind() == "quad_coupling");
}

TEST_CASE("coupling channel requirements") {
    oracle::Gen g(2);
    CHECK_THROWS_AS(AffineCoupling(3, 8, 2, g.rng), std::invalid_argument);
    CHECK_THROWS_AS(QuadCoupling(6, 8, 2, g.rng), std::invalid_argument);
    QuadCoupling q(4, 4, 2, g.rng);
    Real ld = 0;
    CHECK_THROWS(q.forward(g.image({2, 2, 8}), ld));
}

TEST_CASE("coupling round trips with randomized nets") {
    oracle::Gen g(3);
    QuadCoupling q(8, 16, 2, g.rng);
    q.randomize(g.rng, 0.3);
    const Tensor x = g.image({4, 4, 8});
    Real ld = 0;
    const Tensor y = q.forward(x, ld);
    CHECK(max_abs_diff(y, x) > 1e-3);
    CHECK(max_abs_diff(q.inverse(y), x) < 1e-10);

    AffineCoupling a(4, 16, 2, g.rng);
    a.randomize(g.rng, 0.3);
    const Tensor xa = g.image({4, 4, 4});
    CHECK(max_abs_diff(a.inverse(a.forward(xa, ld)), xa) < 1e-10);
}

TEST_CASE("first block passes through, log-scale is bounded") {
    oracle::Gen g(4);
    QuadCoupling q(4, 8, 2, g.rng);
    q.randomize(g.rng, 3);  // large weights saturate tanh
    const Tensor x = g.image({3, 3, 4}, 4);
    Real ld = 0;
    const Tensor y = q.forward(x, ld);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(y(i, j, 0) == x(i, j, 0));
    // three updated blocks, 9 positions, |g| <= 2
    CHECK(std::abs(ld) <= 2 * 27 + 1e-9);
}

TEST_CASE("affine coupling equations") {
    oracle::Gen g(5);
    AffineCoupling a(2, 4, 2, g.rng);
    a.randomize(g.rng, 0.5);
    const Tensor x = g.image({2, 2, 2});
    const auto out = a.net(0).forward(a.parameters(), slice_channels(x, 0, 1));
    Real ld = 0;
    const Tensor y = a.forward(x, ld);
    Real expect_ld = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const Real f = out.shift(i, j, 0), s = out.log_scale(i, j, 0);
            CHECK(y(i, j, 0) == x(i, j, 0));
            CHECK(y(i, j, 1) == doctest::Approx((x(i, j, 1) + f) * std::exp(s)));
            CHECK(std::abs(s) <= 2);
            expect_ld += s;
        }
    CHECK(ld == doctest::Approx(expect_ld));
}

TEST_CASE("quad coupling with nets 2 and 3 at zero reproduces affine coupling") {
    oracle::Gen g(6);
    const int C = 8, hidden = 6;
    QuadCoupling q(C, hidden, 2, g.rng);
    q.randomize(g.rng, 0.4);
    for (int b = 1; b < 3; ++b)
        for (Real& p : q.net_parameters(b)) p = 0;
    AffineCoupling a(C / 2, hidden, 2, g.rng);
    const auto src = q.net_parameters(0);
    auto dst = a.net_parameters(0);
    REQUIRE(src.size() == dst.size());
    std::copy(src.begin(), src.end(), dst.begin());

    const Tensor x = g.image({3, 4, C});
    Real lq = 0, la = 0;
    const Tensor yq = q.forward(x, lq);
    const Tensor ya = a.forward(slice_channels(x, 0, C / 2), la);
    CHECK(slice_channels(yq, 0, C / 2) == ya);
    CHECK(slice_channels(yq, C / 2, C) == slice_channels(x, C / 2, C));
    CHECK(lq == la);
}

TEST_CASE("coupling logdet and gradients against finite differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CAPTURE(seed);
        oracle::Gen g(200 + seed);
        AffineCoupling a(2, 4, 2, g.rng);
        a.randomize(g.rng, 0.5);
        const Tensor xa = g.image({2, 2, 2});
        layer_checks::check_logdet(a, xa, 1e-5);
        layer_checks::check_gradients(a, xa, g);

        QuadCoupling q(4, 4, 2, g.rng);
        q.randomize(g.rng, 0.5);
        const Tensor xq = g.image({2, 2, 4});
        layer_checks::check_logdet(q, xq, 1e-5);
        layer_checks::check_gradients(q, xq, g);
    }
}

TEST_CASE("split prior") {
    oracle::Gen g(7);
    SplitPrior sp(4);
    const Tensor x = g.image({2, 3, 4});
    const auto r = sp.forward(x);
    CHECK(r.keep == slice_channels(x, 0, 2));
    CHECK(r.z == slice_channels(x, 2, 4));
    CHECK(r.logp == doctest::Approx(oracle::normal_logp(r.z)));
    CHECK(sp.inverse(r.keep, r.z) == x);

    SplitPrior tiny(2);
    const auto t = tiny.forward(Tensor(Shape{1, 1, 2}));
    CHECK(t.logp == doctest::Approx(-0.5 * std::log(2 * M_PI)));
    CHECK(2 * t.logp == doctest::Approx(2 * (-0.5 * std::log(2 * M_PI))));
    CHECK(standard_normal_logp(Tensor(Shape{1, 1, 2})) == doctest::Approx(2 * (-0.5 * std::log(2 * M_PI))));
}

TEST_CASE("split prior with learned moments") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CAPTURE(seed);
        oracle::Gen g(300 + seed);
        SplitPrior sp(4);
        sp.randomize(g.rng, 0.3);
        const Tensor x = g.image({2, 2, 4});
        const auto r = sp.forward(x);

        // logp equals the Gaussian density of eps minus the sum of log sigma
        const Tensor eps = sp.standardize(r.keep, r.z);
        CHECK(r.logp == doctest::Approx(oracle::normal_logp(eps) - sp.sum_log_sigma(r.keep)).epsilon(1e-12));

        // x -> (keep, eps) has log-Jacobian -sum(log sigma)
        const auto J = oracle::fd_jacobian([&](const Tensor& t) {
            const auto s = sp.forward(t);
            return concat_channels({s.keep, sp.standardize(s.keep, s.z)});
        }, x);
        CHECK(std::abs(oracle::log_abs_det(J) + sp.sum_log_sigma(r.keep)) < 1e-4 * std::max<Real>(1, std::abs(sp.sum_log_sigma(r.keep))));

        // gradients of scale * logp
        const Real scale = g.uniform(-1.5, 1.5);
        std::vector<Real> grad(sp.parameter_count(), 0);
        const auto [gk, gz] = sp.backward(r.keep, r.z, scale, grad);
        const Real h = 1e-5;
        auto params = sp.parameters();
        for (std::size_t q = 0; q < params.size(); ++q) {
            const Real keep = params[q];
            params[q] = keep + h;
            const Real fp = scale * sp.forward(x).logp;
            params[q] = keep - h;
            const Real fm = scale * sp.forward(x).logp;
            params[q] = keep;
            REQUIRE(oracle::rel_close(grad[q], (fp - fm) / (2 * h), 1e-4));
        }
        const Tensor gx = concat_channels({gk, gz});
        for (std::size_t q = 0; q < x.size(); ++q) {
            Tensor xp = x, xm = x;
            xp.data()[q] += h;
            xm.data()[q] -= h;
            const Real num = scale * (sp.forward(xp).logp - sp.forward(xm).logp) / (2 * h);
            REQUIRE(oracle::rel_close(gx.data()[q], num, 1e-4));
        }
    }
}

TEST_CASE("split prior sampling at zero temperature returns the mean") {
    oracle::Gen g(8);
    SplitPrior sp(2);
    const Tensor keep = g.image({2, 2, 1});
    const Tensor z = sp.sample(keep, g.rng, 0);
    CHECK(max_abs(z) == 0);
}
