#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace invflow {

#ifdef INVFLOW_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

/// Spatial shape of one image: height, width, channels.
struct Shape {
    int h = 0;
    int w = 0;
    int c = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) *
               static_cast<std::size_t>(c);
    }
    std::string str() const;
    bool operator==(const Shape&) const = default;
};

/// Zero padding widths in pixels: top, bottom, left, right.
struct PadSpec {
    int t = 0;
    int b = 0;
    int l = 0;
    int r = 0;

    /// The one-sided padding that makes a k x k convolution triangular.
    static PadSpec causal(int k) { return {k - 1, 0, k - 1, 0}; }
    /// Standard "same" padding of an odd k x k convolution.
    static PadSpec symmetric(int k) {
        int p = (k - 1) / 2;
        return {p, p, p, p};
    }
    bool operator==(const PadSpec&) const = default;
};

/// Dense rank-3 (H, W, C) or rank-4 (N, H, W, C) array.
///
/// Storage is row-major with the channel index fastest, so element
/// (i, j, c) of an image lives at c + C*j + C*W*i and image n starts at
/// n*H*W*C.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = 0);
    Tensor(Shape shape, std::vector<Real> data);
    Tensor(int batch, Shape shape, Real fill = 0);
    Tensor(int batch, Shape shape, std::vector<Real> data);

    int rank() const { return rank_; }
    int batch() const { return batch_; }
    Shape shape() const { return shape_; }
    int height() const { return shape_.h; }
    int width() const { return shape_.w; }
    int channels() const { return shape_.c; }
    std::size_t size() const { return data_.size(); }

    Real& operator()(int i, int j, int c) { return data_[offset(i, j, c)]; }
    Real operator()(int i, int j, int c) const { return data_[offset(i, j, c)]; }
    Real& operator()(int n, int i, int j, int c) {
        return data_[static_cast<std::size_t>(n) * shape_.size() + offset(i, j, c)];
    }
    Real operator()(int n, int i, int j, int c) const {
        return data_[static_cast<std::size_t>(n) * shape_.size() + offset(i, j, c)];
    }

    std::span<Real> data() { return data_; }
    std::span<const Real> data() const { return data_; }
    std::vector<Real>& storage() { return data_; }
    const std::vector<Real>& storage() const { return data_; }

    /// Copy of image n of a batch (rank 3 result).
    Tensor image(int n) const;
    void set_image(int n, const Tensor& img);
    static Tensor stack(const std::vector<Tensor>& images);

    bool operator==(const Tensor&) const = default;

private:
    std::size_t offset(int i, int j, int c) const {
        return static_cast<std::size_t>(c) +
               static_cast<std::size_t>(shape_.c) *
                   (static_cast<std::size_t>(j) +
                    static_cast<std::size_t>(shape_.w) * static_cast<std::size_t>(i));
    }

    Shape shape_{};
    int batch_ = 1;
    int rank_ = 3;
    std::vector<Real> data_;
};

/// Flat position of (i, j, c) in an image of the given shape.
/// Throws std::out_of_range for indices outside the shape.
std::size_t flat_index(int i, int j, int c, Shape shape);

/// Inverse of flat_index.
struct PixelIndex {
    int i = 0;
    int j = 0;
    int c = 0;
    bool operator==(const PixelIndex&) const = default;
};
PixelIndex unflatten_index(std::size_t q, Shape shape);

/// Zero-pads an image; output shape is (H+t+b, W+l+r, C).
Tensor pad(const Tensor& x, const PadSpec& spec);
/// Removes padding added by pad().
Tensor unpad(const Tensor& x, const PadSpec& spec);

// Elementwise arithmetic. Shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

/// Per-pixel contraction over channels: y[p, co] = sum_ci x[p, ci] * m[ci, co].
/// `m` is row-major with shape (C_in, C_out).
Tensor channel_matmul(const Tensor& x, std::span<const Real> m, int c_out);

/// Channels [begin, end) of an image.
Tensor slice_channels(const Tensor& x, int begin, int end);
/// Splits into `parts` equal channel groups.
std::vector<Tensor> split_channels(const Tensor& x, int parts);
Tensor concat_channels(const std::vector<Tensor>& parts);

Real sum(const Tensor& a);
Real dot(const Tensor& a, const Tensor& b);
Real norm(const Tensor& a);
Real max_abs(const Tensor& a);
Real max_abs_diff(const Tensor& a, const Tensor& b);

/// Calls f(i, j) for every pixel in raster order.
template <class F>
void for_each_pixel(Shape shape, F&& f) {
    for (int i = 0; i < shape.h; ++i)
        for (int j = 0; j < shape.w; ++j) f(i, j);
}

}  // namespace invflow
