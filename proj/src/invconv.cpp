#include "invflow/invconv.hpp"

#include <cmath>

#include "invflow/small_lu.hpp"

namespace invflow {

std::string to_string(KernelVariant v) {
    return v == KernelVariant::BlockTriangular ? "block" : "masked";
}

std::string to_string(KernelOrientation o) {
    switch (o) {
        case KernelOrientation::TopLeft: return "top-left";
        case KernelOrientation::CenteredForward: return "centered-forward";
        case KernelOrientation::CenteredReverse: return "centered-reverse";
    }
    return "?";
}

KernelVariant parse_variant(const std::string& s) {
    if (s == "block" || s == "BlockTriangular") return KernelVariant::BlockTriangular;
    if (s == "masked" || s == "MaskedTriangular") return KernelVariant::MaskedTriangular;
    throw std::invalid_argument("unknown kernel variant '" + s + "' (expected block or masked)");
}

ConvKernel::ConvKernel(int k, int channels, KernelVariant variant, KernelOrientation orientation)
    : k_(k), c_(channels), variant_(variant), orientation_(orientation) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("ConvKernel: window size must be odd");
    if (channels < 1) throw std::invalid_argument("ConvKernel: need at least one channel");
    w_.assign(static_cast<std::size_t>(k) * k * channels * channels, 0);
}

ConvKernel ConvKernel::identity(int k, int channels, KernelVariant variant,
                                KernelOrientation orientation) {
    ConvKernel K(k, channels, variant, orientation);
    for (int c = 0; c < channels; ++c) K(K.diag_row(), K.diag_col(), c, c) = 1;
    return K;
}

ConvKernel ConvKernel::random(int k, int channels, KernelVariant variant, std::mt19937_64& rng,
                              Real sigma, Real min_diag, KernelOrientation orientation) {
    ConvKernel K(k, channels, variant, orientation);
    std::normal_distribution<Real> normal(0, sigma);
    std::uniform_real_distribution<Real> unit(0, 1);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b)
            for (int ci = 0; ci < channels; ++ci)
                for (int co = 0; co < channels; ++co) {
                    if (K.masked(a, b, ci, co)) continue;
                    if (a == K.diag_row() && b == K.diag_col() && ci == co) {
                        const Real mag = min_diag + unit(rng);
                        K(a, b, ci, co) = unit(rng) < 0.5 ? -mag : mag;
                    } else {
                        K(a, b, ci, co) = normal(rng);
                    }
                }
    return K;
}

int ConvKernel::diag_row() const {
    return orientation_ == KernelOrientation::TopLeft ? k_ - 1 : (k_ - 1) / 2;
}

int ConvKernel::diag_col() const { return diag_row(); }

PadSpec ConvKernel::padding() const {
    return orientation_ == KernelOrientation::TopLeft ? PadSpec::causal(k_)
                                                       : PadSpec::symmetric(k_);
}

bool ConvKernel::masked(int a, int b, int ci, int co) const {
    const int r = diag_row();
    switch (orientation_) {
        case KernelOrientation::TopLeft: break;
        case KernelOrientation::CenteredForward:
            if (a > r || (a == r && b > r)) return true;
            break;
        case KernelOrientation::CenteredReverse:
            if (a < r || (a == r && b < r)) return true;
            break;
    }
    return variant_ == KernelVariant::MaskedTriangular && a == r && b == r && ci > co;
}

bool ConvKernel::satisfies_mask() const {
    for (int a = 0; a < k_; ++a)
        for (int b = 0; b < k_; ++b)
            for (int ci = 0; ci < c_; ++ci)
                for (int co = 0; co < c_; ++co)
                    if (masked(a, b, ci, co) && (*this)(a, b, ci, co) != 0) return false;
    return true;
}

void ConvKernel::apply_mask() {
    for (int a = 0; a < k_; ++a)
        for (int b = 0; b < k_; ++b)
            for (int ci = 0; ci < c_; ++ci)
                for (int co = 0; co < c_; ++co)
                    if (masked(a, b, ci, co)) (*this)(a, b, ci, co) = 0;
}

std::vector<Real> ConvKernel::diagonal_block() const {
    const std::size_t base = index(diag_row(), diag_col(), 0, 0);
    return {w_.begin() + static_cast<std::ptrdiff_t>(base),
            w_.begin() + static_cast<std::ptrdiff_t>(base + static_cast<std::size_t>(c_) * c_)};
}

Tensor conv_forward(const Tensor& x, const ConvKernel& k) { return conv_forward(x, k, k.padding()); }

Tensor conv_forward(const Tensor& x, const ConvKernel& kernel, const PadSpec& pad) {
    if (x.rank() != 3) throw std::invalid_argument("conv_forward: expects a rank-3 image");
    if (x.channels() != kernel.channels())
        throw std::invalid_argument("conv_forward: image has " + std::to_string(x.channels()) +
                                    " channels, kernel expects " +
                                    std::to_string(kernel.channels()));
    const int k = kernel.size();
    const int C = kernel.channels();
    const int H = x.height();
    const int W = x.width();
    const int out_h = H + pad.t + pad.b - k + 1;
    const int out_w = W + pad.l + pad.r - k + 1;
    if (out_h < 0 || out_w < 0) throw std::invalid_argument("conv_forward: image smaller than window");
    Tensor y({out_h, out_w, C});
    const Real* xd = x.data().data();
    const Real* wd = kernel.weights().data();
    Real* yd = y.data().data();
    for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j) {
            Real* yp = yd + (static_cast<std::size_t>(i) * out_w + j) * C;
            for (int a = 0; a < k; ++a) {
                const int ii = i + a - pad.t;
                if (ii < 0 || ii >= H) continue;
                for (int b = 0; b < k; ++b) {
                    const int jj = j + b - pad.l;
                    if (jj < 0 || jj >= W) continue;
                    const Real* xp = xd + (static_cast<std::size_t>(ii) * W + jj) * C;
                    const Real* wp = wd + kernel.index(a, b, 0, 0);
                    for (int ci = 0; ci < C; ++ci) {
                        const Real v = xp[ci];
                        const Real* row = wp + static_cast<std::size_t>(ci) * C;
                        for (int co = 0; co < C; ++co) yp[co] += v * row[co];
                    }
                }
            }
        }
    return y;
}

Tensor conv_inverse(const Tensor& y, const ConvKernel& kernel, Real tol) {
    if (y.rank() != 3) throw std::invalid_argument("conv_inverse: expects a rank-3 image");
    if (y.channels() != kernel.channels())
        throw std::invalid_argument("conv_inverse: channel mismatch");
    if (auto v = is_invertible(kernel, tol); !v)
        throw SingularKernelError("conv_inverse: singular kernel: " + v.reason);

    const int k = kernel.size();
    const int C = kernel.channels();
    const int H = y.height();
    const int W = y.width();
    const PadSpec pad = kernel.padding();
    const int dr = kernel.diag_row();
    const int dc = kernel.diag_col();
    const bool reverse = kernel.orientation() == KernelOrientation::CenteredReverse;
    const bool masked = kernel.variant() == KernelVariant::MaskedTriangular;
    const std::vector<Real> D = kernel.diagonal_block();
    SmallLU lu;
    if (!masked) lu = SmallLU(D, C);

    Tensor x(y.shape());
    const Real* yd = y.data().data();
    const Real* wd = kernel.weights().data();
    Real* xd = x.data().data();
    std::vector<Real> r(static_cast<std::size_t>(C));
    const std::ptrdiff_t pixels = static_cast<std::ptrdiff_t>(H) * W;

    for (std::ptrdiff_t step = 0; step < pixels; ++step) {
        const std::ptrdiff_t q = reverse ? pixels - 1 - step : step;
        const int i = static_cast<int>(q / W);
        const int j = static_cast<int>(q % W);
        const Real* yp = yd + q * C;
        std::copy(yp, yp + C, r.begin());
        for (int a = 0; a < k; ++a) {
            const int ii = i + a - pad.t;
            if (ii < 0 || ii >= H) continue;
            for (int b = 0; b < k; ++b) {
                const int jj = j + b - pad.l;
                if (jj < 0 || jj >= W || (a == dr && b == dc)) continue;
                const Real* xp = xd + (static_cast<std::size_t>(ii) * W + jj) * C;
                const Real* wp = wd + kernel.index(a, b, 0, 0);
                for (int ci = 0; ci < C; ++ci) {
                    const Real v = xp[ci];
                    const Real* row = wp + static_cast<std::size_t>(ci) * C;
                    for (int co = 0; co < C; ++co) r[co] -= v * row[co];
                }
            }
        }
        // Solve sum_ci x[ci] D[ci, co] = r[co].
        Real* xp = xd + q * C;
        if (masked) {
            for (int co = 0; co < C; ++co) {
                Real v = r[co];
                for (int ci = 0; ci < co; ++ci) v -= xp[ci] * D[static_cast<std::size_t>(ci) * C + co];
                xp[co] = v / D[static_cast<std::size_t>(co) * C + co];
            }
        } else {
            lu.solve_transposed(r);
            std::copy(r.begin(), r.end(), xp);
        }
    }
    return x;
}

InvertibilityVerdict is_invertible(const ConvKernel& k, Real tol) {
    if (!k.satisfies_mask()) return {false, "mask violated"};
    const int C = k.channels();
    const std::vector<Real> D = k.diagonal_block();
    if (k.variant() == KernelVariant::MaskedTriangular || C == 1) {
        for (int c = 0; c < C; ++c)
            if (!(std::abs(D[static_cast<std::size_t>(c) * C + c]) > tol))
                return {false, C == 1 ? "zero diagonal tap"
                                      : "zero diagonal tap at channel " + std::to_string(c)};
        return {true, {}};
    }
    const SmallLU lu(D, C);
    if (!(std::abs(lu.det()) > tol)) return {false, "singular block"};
    return {true, {}};
}

Real conv_logdet(const ConvKernel& k, int height, int width, Real tol) {
    if (auto v = is_invertible(k, tol); !v)
        throw SingularKernelError("conv_logdet: singular kernel: " + v.reason);
    const int C = k.channels();
    const std::vector<Real> D = k.diagonal_block();
    Real per_pixel = 0;
    if (k.variant() == KernelVariant::MaskedTriangular) {
        for (int c = 0; c < C; ++c) per_pixel += std::log(std::abs(D[static_cast<std::size_t>(c) * C + c]));
    } else {
        per_pixel = SmallLU(D, C).log_abs_det();
    }
    return static_cast<Real>(height) * static_cast<Real>(width) * per_pixel;
}

std::size_t free_weight_count(int k, int channels) {
    const auto kk = static_cast<std::size_t>(k) * k;
    const auto cc = static_cast<std::size_t>(channels);
    return kk * cc * cc - cc * (cc + 1) / 2;
}

ConvKernel reconstruct_kernel(const InvConvParams& p) {
    ConvKernel K(p.k, p.channels, KernelVariant::MaskedTriangular, p.orientation);
    if (p.signs.size() != static_cast<std::size_t>(p.channels) || p.log_mag.size() != p.signs.size())
        throw std::invalid_argument("reconstruct_kernel: diagonal parameter count mismatch");
    std::size_t f = 0;
    const int dr = K.diag_row();
    for (int a = 0; a < p.k; ++a)
        for (int b = 0; b < p.k; ++b)
            for (int ci = 0; ci < p.channels; ++ci)
                for (int co = 0; co < p.channels; ++co) {
                    if (K.masked(a, b, ci, co)) continue;
                    if (a == dr && b == dr && ci == co) {
                        K(a, b, ci, co) = p.signs[ci] * std::exp(p.log_mag[ci]);
                    } else {
                        if (f >= p.free.size())
                            throw std::invalid_argument("reconstruct_kernel: too few free weights");
                        K(a, b, ci, co) = p.free[f++];
                    }
                }
    if (f != p.free.size()) throw std::invalid_argument("reconstruct_kernel: too many free weights");
    return K;
}

InvConvParams extract_params(const ConvKernel& K) {
    if (K.variant() != KernelVariant::MaskedTriangular)
        throw std::invalid_argument("extract_params: only masked kernels are parameterized");
    if (!K.satisfies_mask()) throw std::invalid_argument("extract_params: kernel violates its mask");
    InvConvParams p;
    p.k = K.size();
    p.channels = K.channels();
    p.orientation = K.orientation();
    const int dr = K.diag_row();
    for (int a = 0; a < p.k; ++a)
        for (int b = 0; b < p.k; ++b)
            for (int ci = 0; ci < p.channels; ++ci)
                for (int co = 0; co < p.channels; ++co) {
                    if (K.masked(a, b, ci, co)) continue;
                    const Real v = K(a, b, ci, co);
                    if (a == dr && b == dr && ci == co) {
                        if (v == 0) throw std::invalid_argument("extract_params: zero diagonal entry");
                        p.signs.push_back(v < 0 ? -1 : 1);
                        p.log_mag.push_back(std::log(std::abs(v)));
                    } else {
                        p.free.push_back(v);
                    }
                }
    return p;
}

EmergingConv EmergingConv::identity(int k, int channels) {
    return {ConvKernel::identity(k, channels, KernelVariant::MaskedTriangular,
                                 KernelOrientation::CenteredForward),
            ConvKernel::identity(k, channels, KernelVariant::MaskedTriangular,
                                 KernelOrientation::CenteredReverse)};
}

EmergingConv EmergingConv::random(int k, int channels, std::mt19937_64& rng, Real sigma,
                                  Real min_diag) {
    auto first = ConvKernel::random(k, channels, KernelVariant::MaskedTriangular, rng, sigma,
                                    min_diag, KernelOrientation::CenteredForward);
    auto second = ConvKernel::random(k, channels, KernelVariant::MaskedTriangular, rng, sigma,
                                     min_diag, KernelOrientation::CenteredReverse);
    return {std::move(first), std::move(second)};
}

Tensor emerging_forward(const Tensor& x, const EmergingConv& e) {
    return conv_forward(conv_forward(x, e.first), e.second);
}

Tensor emerging_inverse(const Tensor& y, const EmergingConv& e, Real tol) {
    return conv_inverse(conv_inverse(y, e.second, tol), e.first, tol);
}

Real emerging_logdet(const EmergingConv& e, int height, int width) {
    return conv_logdet(e.first, height, width) + conv_logdet(e.second, height, width);
}

}  // namespace invflow
