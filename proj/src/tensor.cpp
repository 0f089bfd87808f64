#include "invflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace invflow {

namespace {

void check_shape(Shape s) {
    if (s.h < 0 || s.w < 0 || s.c < 0)
        throw std::invalid_argument("tensor: negative dimension in shape " + s.str());
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape() || a.batch() != b.batch() || a.rank() != b.rank())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a.shape().str() + " vs " + b.shape().str());
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
    require_same(a, b, op);
    Tensor out = a;
    auto o = out.data();
    auto bd = b.data();
    for (std::size_t q = 0; q < o.size(); ++q) o[q] = f(o[q], bd[q]);
    return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
    Tensor out = a;
    for (Real& v : out.data()) v = f(v);
    return out;
}

void require_image(const Tensor& x, const char* op) {
    if (x.rank() != 3) throw std::invalid_argument(std::string(op) + ": expects a rank-3 image");
}

}  // namespace

std::string Shape::str() const {
    return "(" + std::to_string(h) + ", " + std::to_string(w) + ", " + std::to_string(c) + ")";
}

Tensor::Tensor(Shape shape, Real fill) : shape_(shape) {
    check_shape(shape);
    data_.assign(shape.size(), fill);
}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
    check_shape(shape);
    if (data_.size() != shape.size())
        throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape.str());
}

Tensor::Tensor(int batch, Shape shape, Real fill) : shape_(shape), batch_(batch), rank_(4) {
    check_shape(shape);
    if (batch < 0) throw std::invalid_argument("tensor: negative batch size");
    data_.assign(static_cast<std::size_t>(batch) * shape.size(), fill);
}

Tensor::Tensor(int batch, Shape shape, std::vector<Real> data)
    : shape_(shape), batch_(batch), rank_(4), data_(std::move(data)) {
    check_shape(shape);
    if (batch < 0) throw std::invalid_argument("tensor: negative batch size");
    if (data_.size() != static_cast<std::size_t>(batch) * shape.size())
        throw std::invalid_argument("tensor: data length does not match batch shape");
}

Tensor Tensor::image(int n) const {
    if (n < 0 || n >= batch_) throw std::out_of_range("tensor: image index out of range");
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(n * shape_.size());
    return Tensor(shape_, std::vector<Real>(first, first + static_cast<std::ptrdiff_t>(shape_.size())));
}

void Tensor::set_image(int n, const Tensor& img) {
    if (n < 0 || n >= batch_) throw std::out_of_range("tensor: image index out of range");
    if (img.shape() != shape_) throw std::invalid_argument("tensor: set_image shape mismatch");
    std::copy(img.data_.begin(), img.data_.end(),
              data_.begin() + static_cast<std::ptrdiff_t>(n * shape_.size()));
}

Tensor Tensor::stack(const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("tensor: cannot stack zero images");
    Shape s = images.front().shape();
    Tensor out(static_cast<int>(images.size()), s);
    for (std::size_t n = 0; n < images.size(); ++n) out.set_image(static_cast<int>(n), images[n]);
    return out;
}

std::size_t flat_index(int i, int j, int c, Shape shape) {
    if (i < 0 || i >= shape.h || j < 0 || j >= shape.w || c < 0 || c >= shape.c)
        throw std::out_of_range("flat_index: (" + std::to_string(i) + ", " + std::to_string(j) +
                                ", " + std::to_string(c) + ") outside shape " + shape.str());
    return static_cast<std::size_t>(c) +
           static_cast<std::size_t>(shape.c) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(shape.w) * static_cast<std::size_t>(i));
}

PixelIndex unflatten_index(std::size_t q, Shape shape) {
    if (q >= shape.size()) throw std::out_of_range("unflatten_index: index outside shape");
    auto c = static_cast<int>(q % static_cast<std::size_t>(shape.c));
    q /= static_cast<std::size_t>(shape.c);
    auto j = static_cast<int>(q % static_cast<std::size_t>(shape.w));
    auto i = static_cast<int>(q / static_cast<std::size_t>(shape.w));
    return {i, j, c};
}

Tensor pad(const Tensor& x, const PadSpec& spec) {
    require_image(x, "pad");
    if (spec.t < 0 || spec.b < 0 || spec.l < 0 || spec.r < 0)
        throw std::invalid_argument("pad: negative pad width");
    Shape s = x.shape();
    Tensor out({s.h + spec.t + spec.b, s.w + spec.l + spec.r, s.c});
    for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j)
            for (int c = 0; c < s.c; ++c) out(i + spec.t, j + spec.l, c) = x(i, j, c);
    return out;
}

Tensor unpad(const Tensor& x, const PadSpec& spec) {
    require_image(x, "unpad");
    Shape s = x.shape();
    Shape inner{s.h - spec.t - spec.b, s.w - spec.l - spec.r, s.c};
    if (inner.h < 0 || inner.w < 0) throw std::invalid_argument("unpad: padding exceeds image");
    Tensor out(inner);
    for (int i = 0; i < inner.h; ++i)
        for (int j = 0; j < inner.w; ++j)
            for (int c = 0; c < s.c; ++c) out(i, j, c) = x(i + spec.t, j + spec.l, c);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, "add", [](Real u, Real v) { return u + v; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, "sub", [](Real u, Real v) { return u - v; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return zip(a, b, "mul", [](Real u, Real v) { return u * v; });
}
Tensor scale(const Tensor& a, Real s) {
    return map(a, [s](Real v) { return v * s; });
}
Tensor exp(const Tensor& a) {
    return map(a, [](Real v) { return std::exp(v); });
}
Tensor log(const Tensor& a) {
    return map(a, [](Real v) { return std::log(v); });
}

Tensor channel_matmul(const Tensor& x, std::span<const Real> m, int c_out) {
    require_image(x, "channel_matmul");
    const int c_in = x.channels();
    if (m.size() != static_cast<std::size_t>(c_in) * static_cast<std::size_t>(c_out))
        throw std::invalid_argument("channel_matmul: matrix is not C_in x C_out");
    Tensor y({x.height(), x.width(), c_out});
    auto xd = x.data();
    auto yd = y.data();
    const std::size_t pixels = static_cast<std::size_t>(x.height()) * x.width();
    for (std::size_t p = 0; p < pixels; ++p) {
        const Real* xp = &xd[p * c_in];
        Real* yp = &yd[p * c_out];
        for (int ci = 0; ci < c_in; ++ci) {
            const Real v = xp[ci];
            const Real* row = &m[static_cast<std::size_t>(ci) * c_out];
            for (int co = 0; co < c_out; ++co) yp[co] += v * row[co];
        }
    }
    return y;
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
    require_image(x, "slice_channels");
    if (begin < 0 || end > x.channels() || begin > end)
        throw std::invalid_argument("slice_channels: bad channel range");
    Tensor out({x.height(), x.width(), end - begin});
    const int c_in = x.channels();
    const int c_out = end - begin;
    auto xd = x.data();
    auto od = out.data();
    const std::size_t pixels = static_cast<std::size_t>(x.height()) * x.width();
    for (std::size_t p = 0; p < pixels; ++p)
        std::copy_n(&xd[p * c_in + begin], c_out, &od[p * c_out]);
    return out;
}

std::vector<Tensor> split_channels(const Tensor& x, int parts) {
    if (parts <= 0 || x.channels() % parts != 0)
        throw std::invalid_argument("split_channels: channels not divisible by " +
                                    std::to_string(parts));
    const int step = x.channels() / parts;
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(parts));
    for (int k = 0; k < parts; ++k) out.push_back(slice_channels(x, k * step, (k + 1) * step));
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const int h = parts.front().height();
    const int w = parts.front().width();
    int total = 0;
    for (const auto& p : parts) {
        require_image(p, "concat_channels");
        if (p.height() != h || p.width() != w)
            throw std::invalid_argument("concat_channels: spatial shape mismatch");
        total += p.channels();
    }
    Tensor out({h, w, total});
    auto od = out.data();
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    int offset = 0;
    for (const auto& p : parts) {
        const int c = p.channels();
        auto pd = p.data();
        for (std::size_t q = 0; q < pixels; ++q)
            std::copy_n(&pd[q * c], c, &od[q * total + offset]);
        offset += c;
    }
    return out;
}

Real sum(const Tensor& a) {
    Real s = 0;
    for (Real v : a.data()) s += v;
    return s;
}

Real dot(const Tensor& a, const Tensor& b) {
    require_same(a, b, "dot");
    Real s = 0;
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t q = 0; q < ad.size(); ++q) s += ad[q] * bd[q];
    return s;
}

Real norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

Real max_abs(const Tensor& a) {
    Real m = 0;
    for (Real v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same(a, b, "max_abs_diff");
    Real m = 0;
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t q = 0; q < ad.size(); ++q) m = std::max(m, std::abs(ad[q] - bd[q]));
    return m;
}

}  // namespace invflow
