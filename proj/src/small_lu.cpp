#include "invflow/small_lu.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace invflow {

SmallLU::SmallLU(std::span<const Real> a, int n) : n_(n), lu_(a.begin(), a.end()), perm_(n) {
    if (n < 0 || a.size() != static_cast<std::size_t>(n) * n)
        throw std::invalid_argument("SmallLU: matrix is not n x n");
    std::iota(perm_.begin(), perm_.end(), 0);
    auto at = [this](int r, int c) -> Real& { return lu_[static_cast<std::size_t>(r) * n_ + c]; };
    for (int k = 0; k < n; ++k) {
        int p = k;
        for (int r = k + 1; r < n; ++r)
            if (std::abs(at(r, k)) > std::abs(at(p, k))) p = r;
        if (p != k) {
            for (int c = 0; c < n; ++c) std::swap(at(k, c), at(p, c));
            std::swap(perm_[k], perm_[p]);
            sign_ = -sign_;
        }
        const Real pivot = at(k, k);
        if (pivot == 0) continue;
        for (int r = k + 1; r < n; ++r) {
            const Real f = at(r, k) / pivot;
            at(r, k) = f;
            for (int c = k + 1; c < n; ++c) at(r, c) -= f * at(k, c);
        }
    }
}

Real SmallLU::min_pivot() const {
    Real m = std::numeric_limits<Real>::infinity();
    for (int k = 0; k < n_; ++k) m = std::min(m, std::abs(lu_[static_cast<std::size_t>(k) * n_ + k]));
    return n_ == 0 ? Real(1) : m;
}

Real SmallLU::det() const {
    Real d = sign_;
    for (int k = 0; k < n_; ++k) d *= lu_[static_cast<std::size_t>(k) * n_ + k];
    return d;
}

Real SmallLU::log_abs_det() const {
    Real s = 0;
    for (int k = 0; k < n_; ++k) s += std::log(std::abs(lu_[static_cast<std::size_t>(k) * n_ + k]));
    return s;
}

void SmallLU::solve(std::span<Real> b) const {
    if (b.size() != static_cast<std::size_t>(n_)) throw std::invalid_argument("SmallLU: rhs size");
    std::vector<Real> x(n_);
    for (int r = 0; r < n_; ++r) x[r] = b[perm_[r]];
    for (int r = 0; r < n_; ++r)
        for (int c = 0; c < r; ++c) x[r] -= lu_[static_cast<std::size_t>(r) * n_ + c] * x[c];
    for (int r = n_ - 1; r >= 0; --r) {
        for (int c = r + 1; c < n_; ++c) x[r] -= lu_[static_cast<std::size_t>(r) * n_ + c] * x[c];
        x[r] /= lu_[static_cast<std::size_t>(r) * n_ + r];
    }
    std::copy(x.begin(), x.end(), b.begin());
}

// P A = L U  =>  A^T = U^T L^T P, so A^T x = b is U^T w = b, L^T v = w, x = P^T v.
void SmallLU::solve_transposed(std::span<Real> b) const {
    if (b.size() != static_cast<std::size_t>(n_)) throw std::invalid_argument("SmallLU: rhs size");
    std::vector<Real> w(b.begin(), b.end());
    for (int r = 0; r < n_; ++r) {
        for (int c = 0; c < r; ++c) w[r] -= lu_[static_cast<std::size_t>(c) * n_ + r] * w[c];
        w[r] /= lu_[static_cast<std::size_t>(r) * n_ + r];
    }
    for (int r = n_ - 1; r >= 0; --r)
        for (int c = r + 1; c < n_; ++c) w[r] -= lu_[static_cast<std::size_t>(c) * n_ + r] * w[c];
    for (int r = 0; r < n_; ++r) b[perm_[r]] = w[r];
}

std::vector<Real> SmallLU::inverse() const {
    std::vector<Real> inv(static_cast<std::size_t>(n_) * n_, 0);
    std::vector<Real> col(n_);
    for (int c = 0; c < n_; ++c) {
        std::fill(col.begin(), col.end(), Real(0));
        col[c] = 1;
        solve(col);
        for (int r = 0; r < n_; ++r) inv[static_cast<std::size_t>(r) * n_ + c] = col[r];
    }
    return inv;
}

}  // namespace invflow
