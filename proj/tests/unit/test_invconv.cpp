#include <doctest.h>

#include <array>
#include <cmath>

#include "invflow/invconv.hpp"
#include "oracles.hpp"

using namespace invflow;

namespace {

ConvKernel random_kernel(oracle::Gen& g, int k, int c, KernelVariant v, Real min_diag = 0.5) {
    return ConvKernel::random(k, c, v, g.rng, 0.3, min_diag);
}

// Matrix of the convolution built from the direct definition, one unit image
// per column.
Eigen::MatrixXd direct_matrix(const ConvKernel& K, Shape s) {
    const auto w = oracle::weights_of(K);
    const int top = K.padding().t, left = K.padding().l;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(s.size()));
    for (std::size_t q = 0; q < s.size(); ++q) {
        Tensor e(s);
        e.data()[q] = 1;
        const Tensor y = oracle::direct_conv(e, w, K.size(), top, left);
        for (std::size_t r = 0; r < s.size(); ++r)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)) = y.data()[r];
    }
    return m;
}

}  // namespace

TEST_CASE("identity kernel leaves the image unchanged") {
    oracle::Gen g(1);
    for (int c : {1, 2, 3}) {
        const Tensor x = g.image({4, 5, c});
        for (auto v : {KernelVariant::MaskedTriangular, KernelVariant::BlockTriangular}) {
            const auto K = ConvKernel::identity(3, c, v);
            CHECK(conv_forward(x, K) == x);
            CHECK(conv_inverse(x, K) == x);
            CHECK(conv_logdet(K, 4, 5) == 0);
        }
    }
}

TEST_CASE("all-ones kernel on a 2x2 image") {
    ConvKernel K(3, 1, KernelVariant::MaskedTriangular);
    for (Real& w : K.weights()) w = 1;
    const Tensor x(Shape{2, 2, 1}, {1, 2, 3, 4});
    const Tensor y = conv_forward(x, K);
    CHECK(y == Tensor(Shape{2, 2, 1}, {1, 3, 4, 10}));
}

TEST_CASE("conv_forward matches the direct definition") {
    oracle::Gen g(2);
    for (int t = 0; t < 60; ++t) {
        const int k = 2 * g.integer(0, 2) + 1;
        const int c = g.integer(1, 3);
        const Shape s{g.integer(1, 6), g.integer(1, 6), c};
        const auto v = g.coin() ? KernelVariant::BlockTriangular : KernelVariant::MaskedTriangular;
        const auto o = std::array{KernelOrientation::TopLeft, KernelOrientation::CenteredForward,
                                  KernelOrientation::CenteredReverse}[static_cast<std::size_t>(g.integer(0, 2))];
        const auto K = ConvKernel::random(k, c, v, g.rng, 0.3, 0.5, o);
        const Tensor x = g.image(s);
        const Tensor ref = oracle::direct_conv(x, oracle::weights_of(K), k, K.padding().t, K.padding().l);
        REQUIRE(max_abs_diff(conv_forward(x, K), ref) < 1e-12);
    }
}

TEST_CASE("conv_forward with explicit padding changes the output size") {
    oracle::Gen g(3);
    const auto K = random_kernel(g, 3, 2, KernelVariant::BlockTriangular);
    const Tensor x = g.image({4, 6, 2});
    CHECK(conv_forward(x, K, PadSpec{0, 0, 0, 0}).shape() == Shape{2, 4, 2});
    CHECK(conv_forward(x, K, PadSpec::symmetric(3)).shape() == Shape{4, 6, 2});
    CHECK_THROWS_AS(conv_forward(g.image({4, 4, 3}), K), std::invalid_argument);
}

TEST_CASE("output pixel depends only on pixels above and to the left") {
    oracle::Gen g(4);
    const auto K = random_kernel(g, 3, 2, KernelVariant::BlockTriangular);
    Tensor x = g.image({5, 5, 2});
    const Tensor y = conv_forward(x, K);
    x(3, 3, 1) += 1;  // perturb one input pixel
    const Tensor y2 = conv_forward(x, K);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            for (int c = 0; c < 2; ++c)
                if (i < 3 || j < 3) REQUIRE(y(i, j, c) == y2(i, j, c));
}

TEST_CASE("round trip on random kernels and images") {
    oracle::Gen g(5);
    for (int t = 0; t < 40; ++t) {
        const int c = g.integer(1, 4);
        const Shape s{g.integer(1, 16), g.integer(1, 16), c};
        const auto v = g.coin() ? KernelVariant::BlockTriangular : KernelVariant::MaskedTriangular;
        const auto K = random_kernel(g, 2 * g.integer(0, 2) + 1, c, v);
        const Tensor x = g.image(s);
        REQUIRE(max_abs_diff(conv_inverse(conv_forward(x, K), K), x) < 1e-8);
        const Tensor y = g.image(s);
        REQUIRE(max_abs_diff(conv_forward(conv_inverse(y, K), K), y) < 1e-8);
    }
}

TEST_CASE("logdet matches the determinant of the directly built matrix") {
    oracle::Gen g(6);
    for (int t = 0; t < 30; ++t) {
        const int c = g.integer(1, 3);
        const Shape s{g.integer(1, 4), g.integer(1, 4), c};
        const auto v = g.coin() ? KernelVariant::BlockTriangular : KernelVariant::MaskedTriangular;
        const auto K = random_kernel(g, 3, c, v);
        const Real ref = oracle::log_abs_det(direct_matrix(K, s));
        REQUIRE(conv_logdet(K, s.h, s.w) == doctest::Approx(ref).epsilon(1e-9));
    }
}

TEST_CASE("logdet closed-form examples") {
    ConvKernel K = ConvKernel::identity(3, 1, KernelVariant::MaskedTriangular);
    CHECK(conv_logdet(K, 7, 3) == 0);
    K(2, 2, 0, 0) = 2;
    CHECK(conv_logdet(K, 2, 2) == doctest::Approx(4 * std::log(2.0)));
    CHECK(oracle::det_by_elimination(direct_matrix(K, {2, 2, 1})) == doctest::Approx(16));
}

TEST_CASE("masked variant zeroes the lower part of the diagonal tap") {
    oracle::Gen g(7);
    const auto K = random_kernel(g, 3, 3, KernelVariant::MaskedTriangular);
    CHECK(K.satisfies_mask());
    for (int ci = 0; ci < 3; ++ci)
        for (int co = 0; co < 3; ++co) {
            CHECK(K.masked(2, 2, ci, co) == (ci > co));
            CHECK_FALSE(K.masked(0, 1, ci, co));
            if (ci > co) CHECK(K(2, 2, ci, co) == 0);
        }
    ConvKernel B = random_kernel(g, 3, 3, KernelVariant::BlockTriangular);
    CHECK_FALSE(B.masked(2, 2, 2, 0));
    ConvKernel M = ConvKernel(3, 2, KernelVariant::MaskedTriangular);
    M(2, 2, 1, 0) = 5;
    CHECK_FALSE(M.satisfies_mask());
    M.apply_mask();
    CHECK(M.satisfies_mask());
}

TEST_CASE("invertibility verdicts") {
    oracle::Gen g(8);
    ConvKernel K = random_kernel(g, 3, 1, KernelVariant::MaskedTriangular);
    K(2, 2, 0, 0) = 0;
    auto v = is_invertible(K);
    CHECK_FALSE(v.invertible);
    CHECK(v.reason == "zero diagonal tap");
    CHECK_THROWS_AS(conv_inverse(g.image({3, 3, 1}), K), SingularKernelError);
    CHECK_THROWS_AS(conv_logdet(K, 3, 3), SingularKernelError);

    K(2, 2, 0, 0) = 0.5;
    CHECK(is_invertible(K).invertible);

    ConvKernel B = ConvKernel::identity(3, 2, KernelVariant::BlockTriangular);
    B(2, 2, 0, 0) = B(2, 2, 0, 1) = B(2, 2, 1, 0) = B(2, 2, 1, 1) = 1;
    v = is_invertible(B);
    CHECK_FALSE(v.invertible);
    CHECK(v.reason == "singular block");
    CHECK(oracle::det_by_elimination(direct_matrix(B, {2, 2, 2})) == doctest::Approx(0).epsilon(1e-12));
    CHECK_THROWS_AS(conv_inverse(g.image({2, 2, 2}), B), SingularKernelError);

    ConvKernel M = random_kernel(g, 3, 3, KernelVariant::MaskedTriangular);
    M(2, 2, 1, 1) = 0;
    v = is_invertible(M);
    CHECK_FALSE(v.invertible);
    CHECK(v.reason.find("zero diagonal tap") != std::string::npos);

    ConvKernel bad = random_kernel(g, 3, 2, KernelVariant::MaskedTriangular);
    bad(2, 2, 1, 0) = 1;
    CHECK(is_invertible(bad).reason == "mask violated");
}

TEST_CASE("invertibility decision agrees with the rank of the direct matrix") {
    oracle::Gen g(9);
    for (int t = 0; t < 200; ++t) {
        const int c = g.integer(1, 3);
        const auto v = g.coin() ? KernelVariant::BlockTriangular : KernelVariant::MaskedTriangular;
        ConvKernel K = random_kernel(g, 3, c, v);
        if (g.coin()) {
            // force a singular diagonal tap
            const int q = g.integer(0, c - 1);
            if (v == KernelVariant::MaskedTriangular) {
                K(2, 2, q, q) = 0;
            } else {
                for (int co = 0; co < c; ++co) K(2, 2, q, co) = 0;
            }
        }
        const Shape s{g.integer(1, 3), g.integer(1, 3), c};
        Eigen::FullPivLU<Eigen::MatrixXd> lu(direct_matrix(K, s));
        lu.setThreshold(1e-10);
        REQUIRE(is_invertible(K).invertible == lu.isInvertible());
    }
}

TEST_CASE("parameterization round trip") {
    CHECK(free_weight_count(3, 1) == 8);
    CHECK(free_weight_count(3, 4) == 9 * 16 - 10);

    oracle::Gen g(10);
    for (int t = 0; t < 20; ++t) {
        const int c = g.integer(1, 4), k = 2 * g.integer(0, 2) + 1;
        InvConvParams p;
        p.k = k;
        p.channels = c;
        p.free.resize(free_weight_count(k, c));
        for (Real& f : p.free) f = g.normal();
        for (int q = 0; q < c; ++q) {
            p.signs.push_back(g.coin() ? 1 : -1);
            p.log_mag.push_back(g.normal());
        }
        const auto K = reconstruct_kernel(p);
        CHECK(K.satisfies_mask());
        CHECK(is_invertible(K).invertible);
        const auto back = extract_params(K);
        CHECK(back.free == p.free);
        CHECK(back.signs == p.signs);
        for (int q = 0; q < c; ++q)
            CHECK(back.log_mag[static_cast<std::size_t>(q)] == doctest::Approx(p.log_mag[static_cast<std::size_t>(q)]).epsilon(1e-14));
        Real sum = 0;
        for (Real v : p.log_mag) sum += v;
        CHECK(conv_logdet(K, 3, 5) == doctest::Approx(15 * sum));
    }

    InvConvParams zero{3, 2, KernelOrientation::TopLeft, std::vector<Real>(free_weight_count(3, 2)), {1, 1}, {0, 0}};
    const auto K = reconstruct_kernel(zero);
    CHECK(K(2, 2, 0, 0) == 1);
    CHECK(K(2, 2, 1, 1) == 1);

    CHECK_THROWS_AS(extract_params(ConvKernel::identity(3, 2, KernelVariant::BlockTriangular)),
                    std::invalid_argument);
    ConvKernel bad = ConvKernel::identity(3, 2, KernelVariant::MaskedTriangular);
    bad(2, 2, 1, 0) = 1;
    CHECK_THROWS_AS(extract_params(bad), std::invalid_argument);
}

TEST_CASE("logdet gradient with respect to the log-magnitudes is H*W") {
    InvConvParams p{3, 2, KernelOrientation::TopLeft, std::vector<Real>(free_weight_count(3, 2), 0.1), {1, -1}, {0.3, -0.2}};
    const int H = 3, W = 4;
    for (int c = 0; c < 2; ++c) {
        auto f = [&](Real th) {
            auto q = p;
            q.log_mag[static_cast<std::size_t>(c)] = th;
            return conv_logdet(reconstruct_kernel(q), H, W);
        };
        CHECK(oracle::fd_derivative(f, p.log_mag[static_cast<std::size_t>(c)]) == doctest::Approx(H * W).epsilon(1e-8));
    }
}

TEST_CASE("emerging convolution") {
    oracle::Gen g(11);
    const Tensor x = g.image({5, 4, 3});
    const auto id = EmergingConv::identity(3, 3);
    CHECK(emerging_forward(x, id) == x);
    CHECK(emerging_inverse(x, id) == x);

    for (int t = 0; t < 20; ++t) {
        const int c = g.integer(1, 4);
        const Shape s{g.integer(1, 8), g.integer(1, 8), c};
        const auto e = EmergingConv::random(3, c, g.rng);
        const Tensor x2 = g.image(s);
        REQUIRE(max_abs_diff(emerging_inverse(emerging_forward(x2, e), e), x2) < 1e-8);
        // second kernel depends on later pixels only, so its matrix is upper triangular
        CHECK(e.first.orientation() == KernelOrientation::CenteredForward);
        CHECK(e.second.orientation() == KernelOrientation::CenteredReverse);
        if (s.size() <= 48) {
            const Eigen::MatrixXd m = direct_matrix(e.second, s) * direct_matrix(e.first, s);
            REQUIRE(emerging_logdet(e, s.h, s.w) == doctest::Approx(oracle::log_abs_det(m)).epsilon(1e-9));
        }
    }
}
