#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "invflow/tensor.hpp"

namespace invflow {

/// Raised when a convolution cannot be inverted because its diagonal tap is
/// (numerically) singular.
class SingularKernelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Default threshold below which a diagonal tap counts as singular.
inline constexpr Real kSingularTol = 1e-8;

/// How the channels of the diagonal tap D are coupled.
///  - BlockTriangular: D is a full C x C block; invertible iff det D != 0.
///  - MaskedTriangular: D[ci, co] = 0 for ci > co, so output channel co only
///    sees input channels <= co; invertible iff every D[c, c] != 0.
enum class KernelVariant : std::uint8_t { BlockTriangular, MaskedTriangular };

/// Which pixels an output pixel may depend on.
///  - TopLeft: padding (k-1, 0, k-1, 0); all k x k taps are live and output
///    (i, j) depends on inputs (i', j') with i' <= i, j' <= j. Diagonal tap is
///    (k-1, k-1). This is the single-pass invertible convolution.
///  - CenteredForward / CenteredReverse: symmetric padding with taps after
///    (resp. before) the centre in raster order masked out. Diagonal tap is the
///    centre. These are the two halves of an emerging convolution.
enum class KernelOrientation : std::uint8_t { TopLeft, CenteredForward, CenteredReverse };

std::string to_string(KernelVariant v);
std::string to_string(KernelOrientation o);
KernelVariant parse_variant(const std::string& s);

/// A k x k x C x C convolution kernel. Entry (a, b, ci, co) couples input
/// channel ci at window offset (a, b) to output channel co.
class ConvKernel {
public:
    ConvKernel() = default;
    ConvKernel(int k, int channels, KernelVariant variant,
               KernelOrientation orientation = KernelOrientation::TopLeft);

    /// Diagonal tap = identity, every other weight zero.
    static ConvKernel identity(int k, int channels, KernelVariant variant,
                               KernelOrientation orientation = KernelOrientation::TopLeft);
    /// Off-diagonal weights ~ N(0, sigma^2); diagonal tap = identity plus
    /// N(0, sigma^2) on unmasked off-diagonal channel couplings. Diagonal
    /// entries of D are drawn with magnitude in [min_diag, min_diag + 1] and a
    /// random sign.
    static ConvKernel random(int k, int channels, KernelVariant variant, std::mt19937_64& rng,
                             Real sigma = 0.3, Real min_diag = 0.5,
                             KernelOrientation orientation = KernelOrientation::TopLeft);

    int size() const { return k_; }
    int channels() const { return c_; }
    KernelVariant variant() const { return variant_; }
    KernelOrientation orientation() const { return orientation_; }

    Real& operator()(int a, int b, int ci, int co) { return w_[index(a, b, ci, co)]; }
    Real operator()(int a, int b, int ci, int co) const { return w_[index(a, b, ci, co)]; }
    std::span<Real> weights() { return w_; }
    std::span<const Real> weights() const { return w_; }

    /// True if the entry is forced to zero by the variant and orientation.
    bool masked(int a, int b, int ci, int co) const;
    bool satisfies_mask() const;
    /// Zeroes every masked entry.
    void apply_mask();

    /// Window position of the tap that couples a pixel to itself.
    int diag_row() const;
    int diag_col() const;
    /// The diagonal tap as a row-major C x C matrix D[ci][co].
    std::vector<Real> diagonal_block() const;
    /// Padding implied by the orientation.
    PadSpec padding() const;

    std::size_t index(int a, int b, int ci, int co) const {
        return ((static_cast<std::size_t>(a) * k_ + b) * c_ + ci) * c_ + co;
    }

    bool operator==(const ConvKernel&) const = default;

private:
    int k_ = 0;
    int c_ = 0;
    KernelVariant variant_ = KernelVariant::MaskedTriangular;
    KernelOrientation orientation_ = KernelOrientation::TopLeft;
    std::vector<Real> w_;
};

/// Convolution of an (H, W, C) image with the kernel's own padding.
/// Output has the same shape as the input.
Tensor conv_forward(const Tensor& x, const ConvKernel& k);
/// Convolution with an explicit padding; output shape is
/// (H + t + b - k + 1, W + l + r - k + 1, C).
Tensor conv_forward(const Tensor& x, const ConvKernel& k, const PadSpec& pad);

/// Recovers x from y = conv_forward(x, k) by back substitution: pixels are
/// visited in dependency order (raster order, or reverse raster order for
/// CenteredReverse), and at each pixel the C x C system with the diagonal
/// tap is solved, by forward substitution for MaskedTriangular and by LU
/// for BlockTriangular. Throws SingularKernelError when not invertible.
Tensor conv_inverse(const Tensor& y, const ConvKernel& k, Real tol = kSingularTol);

/// log |det| of the convolution's matrix on an H x W image:
/// H*W*sum_c log|D[c,c]| (masked) or H*W*log|det D| (block).
Real conv_logdet(const ConvKernel& k, int height, int width, Real tol = kSingularTol);

struct InvertibilityVerdict {
    bool invertible = false;
    std::string reason;  // empty when invertible
    explicit operator bool() const { return invertible; }
};

/// Applies the variant's diagonal-tap criterion: |D[c,c]| > tol for every c
/// (masked) or |det D| > tol (block).
InvertibilityVerdict is_invertible(const ConvKernel& k, Real tol = kSingularTol);

/// Unconstrained parameterization of a MaskedTriangular kernel in which the
/// diagonal entries are D[c,c] = sign_c * exp(log_mag_c) with the signs fixed.
struct InvConvParams {
    int k = 0;
    int channels = 0;
    KernelOrientation orientation = KernelOrientation::TopLeft;
    /// Every unmasked entry that is not a diagonal entry D[c,c], in kernel
    /// storage order.
    std::vector<Real> free;
    std::vector<Real> signs;    // +1 or -1
    std::vector<Real> log_mag;

    bool operator==(const InvConvParams&) const = default;
};

/// Number of free weights of a masked k x k x C x C kernel.
std::size_t free_weight_count(int k, int channels);

ConvKernel reconstruct_kernel(const InvConvParams& p);
/// Throws std::invalid_argument for block kernels, mask violations, or a
/// zero diagonal entry.
InvConvParams extract_params(const ConvKernel& k);

/// Two-pass emerging convolution: y = conv(conv(x, first), second) with
/// `first` CenteredForward and `second` CenteredReverse.
struct EmergingConv {
    ConvKernel first;
    ConvKernel second;

    static EmergingConv identity(int k, int channels);
    static EmergingConv random(int k, int channels, std::mt19937_64& rng, Real sigma = 0.3,
                               Real min_diag = 0.5);
};

Tensor emerging_forward(const Tensor& x, const EmergingConv& e);
/// Two back substitutions: reverse raster for `second`, then raster for `first`.
Tensor emerging_inverse(const Tensor& y, const EmergingConv& e, Real tol = kSingularTol);
Real emerging_logdet(const EmergingConv& e, int height, int width);

}  // namespace invflow
