#include <doctest.h>

#include <cmath>

#include "invflow/oracle.hpp"
#include "oracles.hpp"

using namespace invflow;

TEST_CASE("identity kernel gives the identity matrix") {
    for (int c : {1, 2}) {
        const auto dm = build_matrix(ConvKernel::identity(3, c, KernelVariant::MaskedTriangular), 3, 4);
        CHECK(dm.m.isIdentity(0));
        CHECK(dense_det(dm.m) == 1);
    }
}

TEST_CASE("matrix times vector equals the convolution") {
    oracle::Gen g(1);
    for (int t = 0; t < 100; ++t) {
        const int c = g.integer(1, 3);
        const Shape s{g.integer(1, 5), g.integer(1, 5), c};
        const auto v = g.coin() ? KernelVariant::BlockTriangular : KernelVariant::MaskedTriangular;
        const auto K = ConvKernel::random(3, c, v, g.rng);
        const Tensor x = g.image(s);
        const auto dm = build_matrix(K, s.h, s.w);
        const DenseVector y = dm.m * to_vector(x);
        const Tensor ref = oracle::direct_conv(x, oracle::weights_of(K), 3, 2, 2);
        REQUIRE((y - to_vector(ref)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("lower triangular with constant diagonal for top-left padding, C = 1") {
    oracle::Gen g(2);
    for (int h = 1; h <= 6; ++h)
        for (int w = 1; w <= 6; ++w) {
            const auto K = ConvKernel::random(3, 1, KernelVariant::MaskedTriangular, g.rng);
            const auto dm = build_matrix(K, h, w);
            for (Eigen::Index r = 0; r < dm.m.rows(); ++r) {
                REQUIRE(dm.m(r, r) == K(2, 2, 0, 0));
                for (Eigen::Index c = r + 1; c < dm.m.cols(); ++c) REQUIRE(dm.m(r, c) == 0);
            }
            REQUIRE(check_triangular(dm).passes(KernelVariant::MaskedTriangular));
        }
}

TEST_CASE("symmetric padding breaks triangularity") {
    oracle::Gen g(3);
    const auto K = ConvKernel::random(3, 1, KernelVariant::MaskedTriangular, g.rng);
    const auto dm = build_matrix(K, 4, 4, PadSpec::symmetric(3));
    const auto rep = check_triangular(dm);
    CHECK_FALSE(rep.lower_triangular);
    REQUIRE(rep.first_violation.has_value());
    CHECK(rep.first_violation->col > rep.first_violation->row);
    CHECK(rep.first_violation->value != 0);
    CHECK(rep.summary().find("lower_triangular=0") != std::string::npos);
}

TEST_CASE("block variant is block triangular but not strictly triangular") {
    oracle::Gen g(4);
    const auto K = ConvKernel::random(3, 2, KernelVariant::BlockTriangular, g.rng);
    const auto rep = check_triangular(build_matrix(K, 3, 3));
    CHECK(rep.block_lower_triangular);
    CHECK(rep.diagonal_blocks_identical);
    CHECK_FALSE(rep.lower_triangular);
    CHECK(rep.passes(KernelVariant::BlockTriangular));
    CHECK_FALSE(rep.passes(KernelVariant::MaskedTriangular));

    const auto M = ConvKernel::random(3, 3, KernelVariant::MaskedTriangular, g.rng);
    const auto mrep = check_triangular(build_matrix(M, 3, 2));
    CHECK(mrep.lower_triangular);
    CHECK(mrep.diagonal_constant_per_channel);
}

TEST_CASE("determinant is det(D)^(H*W)") {
    oracle::Gen g(5);
    for (int t = 0; t < 60; ++t) {
        const int c = g.integer(1, 3);
        const int h = g.integer(1, 5), w = g.integer(1, 5);
        const auto v = g.coin() ? KernelVariant::BlockTriangular : KernelVariant::MaskedTriangular;
        const auto K = ConvKernel::random(3, c, v, g.rng, 0.3, 0.7);
        const auto d = K.diagonal_block();
        Eigen::MatrixXd D(c, c);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j) D(i, j) = d[static_cast<std::size_t>(i * c + j)];
        const Real expect = std::pow(oracle::det_by_elimination(D), h * w);
        REQUIRE(oracle::rel_err(dense_det(build_matrix(K, h, w).m), expect) < 1e-9);
        REQUIRE(dense_log_abs_det(build_matrix(K, h, w).m) ==
                doctest::Approx(conv_logdet(K, h, w)).epsilon(1e-9));
    }
}

TEST_CASE("dense det and solve basics") {
    DenseMatrix two = 2 * DenseMatrix::Identity(16, 16);
    CHECK(dense_det(two) == doctest::Approx(65536));
    DenseVector y = DenseVector::LinSpaced(16, -1, 1);
    CHECK((dense_solve(DenseMatrix::Identity(16, 16), y) - y).norm() == 0);

    oracle::Gen g(6);
    DenseMatrix tri = DenseMatrix::Zero(12, 12);
    Real prod = 1;
    for (int r = 0; r < 12; ++r) {
        for (int c = 0; c <= r; ++c) tri(r, c) = g.uniform(-1, 1);
        tri(r, r) = g.uniform(0.5, 1.5);
        prod *= tri(r, r);
    }
    CHECK(oracle::rel_err(dense_det(tri), prod) < 1e-10);

    DenseMatrix sing = DenseMatrix::Ones(3, 3);
    CHECK(std::abs(dense_det(sing)) < 1e-12);
    CHECK_FALSE(std::isnan(dense_det(sing)));
    CHECK_THROWS_AS(dense_solve(sing, DenseVector::Ones(3)), SingularMatrixError);
}

TEST_CASE("dense solve agrees with back substitution") {
    oracle::Gen g(7);
    for (int t = 0; t < 30; ++t) {
        const int c = g.integer(1, 3);
        const Shape s{g.integer(1, 5), g.integer(1, 5), c};
        const auto v = g.coin() ? KernelVariant::BlockTriangular : KernelVariant::MaskedTriangular;
        const auto K = ConvKernel::random(3, c, v, g.rng);
        const Tensor y = g.image(s);
        const auto dm = build_matrix(K, s.h, s.w);
        const DenseVector x = dense_solve(dm.m, to_vector(y));
        REQUIRE((dm.m * x - to_vector(y)).norm() <= 1e-10 * to_vector(y).norm());
        REQUIRE((x - to_vector(conv_inverse(y, K))).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("size guard") {
    const auto K = ConvKernel::identity(3, 4, KernelVariant::MaskedTriangular);
    CHECK_NOTHROW(build_matrix(K, 32, 32));  // n = 4096
    CHECK_THROWS_AS(build_matrix(K, 33, 32), OracleSizeError);
}

TEST_CASE("matrix dump round trip") {
    oracle::Gen g(8);
    const auto dm = build_matrix(ConvKernel::random(3, 2, KernelVariant::BlockTriangular, g.rng), 2, 3);
    const Tensor t = matrix_to_tensor(dm.m);
    CHECK(t.shape() == Shape{12, 12, 1});
    CHECK(tensor_to_matrix(t) == dm.m);
    CHECK(from_vector(to_vector(t), t.shape()) == t);
}
