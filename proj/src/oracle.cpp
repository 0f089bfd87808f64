#include "invflow/oracle.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace invflow {

DenseConvMatrix build_matrix(const ConvKernel& k, int height, int width) {
    return build_matrix(k, height, width, k.padding());
}

DenseConvMatrix build_matrix(const ConvKernel& k, int height, int width, const PadSpec& pad) {
    const Shape in{height, width, k.channels()};
    const Shape out{height + pad.t + pad.b - k.size() + 1, width + pad.l + pad.r - k.size() + 1,
                    k.channels()};
    if (in.size() > kOracleMaxDim || out.size() > kOracleMaxDim)
        throw OracleSizeError("build_matrix: n = " + std::to_string(in.size()) +
                              " exceeds oracle limit " + std::to_string(kOracleMaxDim));
    DenseConvMatrix result;
    result.input = in;
    result.output = out;
    result.pad = pad;
    result.channels = k.channels();
    result.m = DenseMatrix::Zero(static_cast<Eigen::Index>(out.size()),
                                 static_cast<Eigen::Index>(in.size()));
    Tensor unit(in);
    for (std::size_t q = 0; q < in.size(); ++q) {
        unit.data()[q] = 1;
        const Tensor col = conv_forward(unit, k, pad);
        unit.data()[q] = 0;
        auto cd = col.data();
        for (std::size_t r = 0; r < cd.size(); ++r)
            result.m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)) = cd[r];
    }
    return result;
}

Real dense_det(const DenseMatrix& m) {
    if (m.rows() != m.cols()) throw std::invalid_argument("dense_det: matrix is not square");
    if (m.rows() == 0) return 1;
    return Eigen::PartialPivLU<DenseMatrix>(m).determinant();
}

Real dense_log_abs_det(const DenseMatrix& m) {
    if (m.rows() != m.cols()) throw std::invalid_argument("dense_log_abs_det: matrix is not square");
    if (m.rows() == 0) return 0;
    const Eigen::PartialPivLU<DenseMatrix> lu(m);
    const auto& u = lu.matrixLU();
    Real s = 0;
    for (Eigen::Index q = 0; q < u.rows(); ++q) {
        const Real d = std::abs(u(q, q));
        if (d == 0) return -std::numeric_limits<Real>::infinity();
        s += std::log(d);
    }
    return s;
}

DenseVector dense_solve(const DenseMatrix& m, const DenseVector& y) {
    if (m.rows() != m.cols() || m.rows() != y.size())
        throw std::invalid_argument("dense_solve: dimension mismatch");
    const Eigen::PartialPivLU<DenseMatrix> lu(m);
    const auto& u = lu.matrixLU();
    Real umax = 0;
    Real umin = std::numeric_limits<Real>::infinity();
    for (Eigen::Index q = 0; q < u.rows(); ++q) {
        umax = std::max(umax, std::abs(u(q, q)));
        umin = std::min(umin, std::abs(u(q, q)));
    }
    if (!(umin > umax * std::numeric_limits<Real>::epsilon() * static_cast<Real>(m.rows())))
        throw SingularMatrixError("dense_solve: matrix is singular to working precision");
    return lu.solve(y);
}

DenseVector to_vector(const Tensor& img) {
    auto d = img.data();
    DenseVector v(static_cast<Eigen::Index>(d.size()));
    for (std::size_t q = 0; q < d.size(); ++q) v(static_cast<Eigen::Index>(q)) = d[q];
    return v;
}

Tensor from_vector(const DenseVector& v, Shape shape) {
    if (static_cast<std::size_t>(v.size()) != shape.size())
        throw std::invalid_argument("from_vector: length does not match shape");
    return Tensor(shape, std::vector<Real>(v.data(), v.data() + v.size()));
}

bool TriangularReport::passes(KernelVariant v) const {
    if (!square) return false;
    return v == KernelVariant::MaskedTriangular
               ? lower_triangular && diagonal_constant_per_channel
               : block_lower_triangular && diagonal_blocks_identical;
}

std::string TriangularReport::summary() const {
    std::ostringstream os;
    os << "square=" << square << " lower_triangular=" << lower_triangular
       << " block_lower_triangular=" << block_lower_triangular
       << " diagonal_constant_per_channel=" << diagonal_constant_per_channel
       << " diagonal_blocks_identical=" << diagonal_blocks_identical;
    if (first_violation)
        os << " first_violation=(" << first_violation->row << ", " << first_violation->col
           << ") value=" << first_violation->value;
    return os.str();
}

TriangularReport check_triangular(const DenseConvMatrix& dm) {
    TriangularReport rep;
    const auto& m = dm.m;
    rep.square = m.rows() == m.cols();
    if (!rep.square) return rep;
    const auto n = static_cast<std::size_t>(m.rows());
    const auto C = static_cast<std::size_t>(dm.channels);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = r + 1; c < n; ++c) {
            const Real v = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
            if (v == 0) continue;
            if (!rep.first_violation) rep.first_violation = MatrixEntry{r, c, v};
            if (c / C > r / C && !rep.first_block_violation)
                rep.first_block_violation = MatrixEntry{r, c, v};
        }
    rep.lower_triangular = !rep.first_violation;
    rep.block_lower_triangular = !rep.first_block_violation;

    rep.diagonal_constant_per_channel = true;
    rep.diagonal_blocks_identical = true;
    for (std::size_t q = C; q < n; ++q) {
        const auto e = static_cast<Eigen::Index>(q);
        const auto e0 = static_cast<Eigen::Index>(q % C);
        if (m(e, e) != m(e0, e0)) rep.diagonal_constant_per_channel = false;
    }
    for (std::size_t base = C; base < n; base += C)
        for (std::size_t a = 0; a < C; ++a)
            for (std::size_t b = 0; b < C; ++b)
                if (m(static_cast<Eigen::Index>(base + a), static_cast<Eigen::Index>(base + b)) !=
                    m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)))
                    rep.diagonal_blocks_identical = false;
    return rep;
}

Tensor matrix_to_tensor(const DenseMatrix& m) {
    Tensor t(Shape{static_cast<int>(m.rows()), static_cast<int>(m.cols()), 1});
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) t(static_cast<int>(r), static_cast<int>(c), 0) = m(r, c);
    return t;
}

DenseMatrix tensor_to_matrix(const Tensor& t) {
    if (t.rank() != 3 || t.channels() != 1) throw std::invalid_argument("tensor_to_matrix: expected (rows, cols, 1)");
    DenseMatrix m(t.height(), t.width());
    for (int r = 0; r < t.height(); ++r)
        for (int c = 0; c < t.width(); ++c) m(r, c) = t(r, c, 0);
    return m;
}

}  // namespace invflow
