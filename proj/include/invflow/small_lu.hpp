#pragma once

#include <span>
#include <vector>

#include "invflow/tensor.hpp"

namespace invflow {

/// LU factorization with partial pivoting of a small dense n x n matrix
/// (row-major). Used for C x C channel blocks, where n is at most a few dozen.
class SmallLU {
public:
    SmallLU() = default;
    SmallLU(std::span<const Real> a, int n);

    int dim() const { return n_; }
    /// Smallest pivot magnitude; zero iff the matrix is exactly singular.
    Real min_pivot() const;
    Real det() const;
    Real log_abs_det() const;

    /// Solves A x = b in place.
    void solve(std::span<Real> b) const;
    /// Solves A^T x = b in place.
    void solve_transposed(std::span<Real> b) const;
    /// Row-major inverse.
    std::vector<Real> inverse() const;

private:
    int n_ = 0;
    std::vector<Real> lu_;
    std::vector<int> perm_;
    int sign_ = 1;
};

}  // namespace invflow
