#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>

#include "invflow/invconv.hpp"
#include "invflow/tensor.hpp"

namespace invflow {

using DenseMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using DenseVector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

/// Largest n = H*W*C the oracle will materialize.
inline constexpr std::size_t kOracleMaxDim = 4096;

class OracleSizeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The HWC x HWC matrix M of a padded convolution: vec(conv(X)) = M vec(X),
/// with vec() the channel-fastest flattening of flat_index.
struct DenseConvMatrix {
    DenseMatrix m;
    Shape input;
    Shape output;
    PadSpec pad;
    int channels = 0;
};

/// Builds M column by column: column q is vec(conv_forward(e_q, K, pad)) for
/// the q-th unit image e_q. Throws OracleSizeError when n exceeds the guard.
DenseConvMatrix build_matrix(const ConvKernel& k, int height, int width, const PadSpec& pad);
DenseConvMatrix build_matrix(const ConvKernel& k, int height, int width);

/// Determinant via LU with partial pivoting. Singular matrices give 0
/// (or a value at round-off level), never NaN.
Real dense_det(const DenseMatrix& m);
/// log |det M|; -inf for an exactly singular matrix.
Real dense_log_abs_det(const DenseMatrix& m);
/// Solves M x = y. Throws SingularMatrixError when M is numerically singular.
DenseVector dense_solve(const DenseMatrix& m, const DenseVector& y);

/// The matrix as an (rows, cols, 1) tensor, for dumping in the raw format.
Tensor matrix_to_tensor(const DenseMatrix& m);
DenseMatrix tensor_to_matrix(const Tensor& t);

DenseVector to_vector(const Tensor& img);
Tensor from_vector(const DenseVector& v, Shape shape);

struct MatrixEntry {
    std::size_t row = 0;
    std::size_t col = 0;
    Real value = 0;
};

struct TriangularReport {
    bool square = false;
    /// Every entry above the diagonal is exactly zero.
    bool lower_triangular = false;
    /// Every entry above the C x C diagonal blocks is exactly zero.
    bool block_lower_triangular = false;
    /// Diagonal entries repeat with period C (one value per channel).
    bool diagonal_constant_per_channel = false;
    /// Diagonal C x C blocks are all identical.
    bool diagonal_blocks_identical = false;
    /// First nonzero above the diagonal, in row-major order.
    std::optional<MatrixEntry> first_violation;
    /// First nonzero above the block diagonal.
    std::optional<MatrixEntry> first_block_violation;

    /// Pass/fail for the structure the variant promises: strict lower
    /// triangular for MaskedTriangular, block lower triangular for
    /// BlockTriangular.
    bool passes(KernelVariant v) const;
    std::string summary() const;
};

TriangularReport check_triangular(const DenseConvMatrix& m);

}  // namespace invflow
