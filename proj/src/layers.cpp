#include "invflow/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "conv_ops.hpp"
#include "invflow/small_lu.hpp"

namespace invflow {

namespace {

Tensor row_tensor(std::span<const Real> values) {
    return Tensor({1, 1, static_cast<int>(values.size())}, std::vector<Real>(values.begin(), values.end()));
}

void require_channels(const Tensor& x, int c, const std::string& who) {
    if (x.rank() != 3 || x.channels() != c)
        throw std::invalid_argument(who + ": expected a rank-3 image with " + std::to_string(c) +
                                    " channels, got " + x.shape().str());
}

Real pixel_count(const Tensor& x) { return static_cast<Real>(x.height()) * static_cast<Real>(x.width()); }

}  // namespace

// ---------------------------------------------------------------- FlowLayer

std::vector<Tensor> FlowLayer::state() const { return {row_tensor(params_)}; }

void FlowLayer::set_state(const std::vector<Tensor>& tensors) {
    if (tensors.size() != 1 || tensors[0].size() != params_.size())
        throw std::invalid_argument(kind() + ": state does not match parameter count");
    std::copy(tensors[0].data().begin(), tensors[0].data().end(), params_.begin());
}

void FlowLayer::randomize(std::mt19937_64& rng, Real scale) {
    std::normal_distribution<Real> normal(0, scale);
    for (Real& p : params_) p += normal(rng);
}

// ---------------------------------------------------------------- ActNorm

ActNorm::ActNorm(int channels) : channels_(channels), signs_(static_cast<std::size_t>(channels), 1) {
    if (channels < 1) throw std::invalid_argument("ActNorm: need at least one channel");
    params_.assign(2 * static_cast<std::size_t>(channels), 0);
}

void ActNorm::require_initialized() const {
    if (!initialized_) throw std::logic_error("actnorm: used before initialization");
}

Real ActNorm::scale(int c) const { return signs_[c] * std::exp(params_[c]); }

void ActNorm::set_scale(int c, Real s) {
    if (s == 0) throw std::invalid_argument("actnorm: zero scale");
    signs_[c] = s < 0 ? -1 : 1;
    params_[c] = std::log(std::abs(s));
}

Tensor ActNorm::forward(const Tensor& x, Real& logdet) const {
    require_initialized();
    require_channels(x, channels_, "actnorm");
    Tensor y = x;
    auto yd = y.data();
    std::vector<Real> s(channels_);
    for (int c = 0; c < channels_; ++c) s[c] = scale(c);
    for (std::size_t q = 0; q < yd.size(); ++q) {
        const int c = static_cast<int>(q % channels_);
        yd[q] = s[c] * (yd[q] + bias(c));
    }
    Real ls = 0;
    for (int c = 0; c < channels_; ++c) ls += params_[c];
    logdet += pixel_count(x) * ls;
    return y;
}

Tensor ActNorm::inverse(const Tensor& y) const {
    require_initialized();
    require_channels(y, channels_, "actnorm");
    Tensor x = y;
    auto xd = x.data();
    for (std::size_t q = 0; q < xd.size(); ++q) {
        const int c = static_cast<int>(q % channels_);
        xd[q] = xd[q] / scale(c) - bias(c);
    }
    return x;
}

Tensor ActNorm::backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                         std::span<Real> grad_params) const {
    require_initialized();
    require_channels(x, channels_, "actnorm");
    Tensor gx(x.shape());
    auto xd = x.data();
    auto gy = grad_y.data();
    auto gd = gx.data();
    for (std::size_t q = 0; q < xd.size(); ++q) {
        const int c = static_cast<int>(q % channels_);
        const Real s = scale(c);
        gd[q] = gy[q] * s;
        grad_params[c] += gy[q] * s * (xd[q] + bias(c));  // dy/dlog_scale = y
        grad_params[channels_ + c] += gy[q] * s;
    }
    const Real hw = pixel_count(x);
    for (int c = 0; c < channels_; ++c) grad_params[c] += grad_logdet * hw;
    return gx;
}

void ActNorm::initialize(const std::vector<Tensor>& batch) {
    if (batch.empty()) throw std::invalid_argument("actnorm: initialization needs a batch");
    std::vector<Real> mean(channels_, 0), var(channels_, 0);
    std::size_t count = 0;
    for (const auto& x : batch) {
        require_channels(x, channels_, "actnorm");
        auto d = x.data();
        for (std::size_t q = 0; q < d.size(); ++q) mean[q % channels_] += d[q];
        count += d.size() / channels_;
    }
    for (auto& m : mean) m /= static_cast<Real>(count);
    for (const auto& x : batch) {
        auto d = x.data();
        for (std::size_t q = 0; q < d.size(); ++q) {
            const Real e = d[q] - mean[q % channels_];
            var[q % channels_] += e * e;
        }
    }
    for (int c = 0; c < channels_; ++c) {
        const Real sd = std::sqrt(var[c] / static_cast<Real>(count));
        set_bias(c, -mean[c]);
        set_scale(c, sd > 0 ? 1 / sd : Real(1));
    }
    initialized_ = true;
}

std::vector<Tensor> ActNorm::state() const {
    std::span<const Real> p = params_;
    return {row_tensor(p.first(channels_)), row_tensor(p.subspan(channels_)), row_tensor(signs_),
            row_tensor(std::vector<Real>{initialized_ ? Real(1) : Real(0)})};
}

void ActNorm::set_state(const std::vector<Tensor>& t) {
    const auto C = static_cast<std::size_t>(channels_);
    if (t.size() != 4 || t[0].size() != C || t[1].size() != C || t[2].size() != C || t[3].size() != 1)
        throw std::invalid_argument("actnorm: malformed state");
    std::copy_n(t[0].data().begin(), C, params_.begin());
    std::copy_n(t[1].data().begin(), C, params_.begin() + static_cast<std::ptrdiff_t>(C));
    std::copy_n(t[2].data().begin(), C, signs_.begin());
    initialized_ = t[3].data()[0] != 0;
}

// ---------------------------------------------------------------- Conv1x1

Conv1x1::Conv1x1(int channels) : channels_(channels) {
    if (channels < 1) throw std::invalid_argument("Conv1x1: need at least one channel");
    params_.assign(static_cast<std::size_t>(channels) * channels, 0);
    for (int c = 0; c < channels; ++c) params_[static_cast<std::size_t>(c) * channels + c] = 1;
}

Conv1x1::Conv1x1(int channels, std::mt19937_64& rng) : Conv1x1(channels) {
    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    std::normal_distribution<Real> normal(0, 1);
    Mat a(channels, channels);
    for (int r = 0; r < channels; ++r)
        for (int c = 0; c < channels; ++c) a(r, c) = normal(rng);
    Mat q = Eigen::HouseholderQR<Mat>(a).householderQ();
    std::copy(q.data(), q.data() + q.size(), params_.begin());
}

Tensor Conv1x1::forward(const Tensor& x, Real& logdet) const {
    require_channels(x, channels_, "conv1x1");
    const SmallLU lu(params_, channels_);
    if (lu.min_pivot() == 0) throw SingularKernelError("conv1x1: singular weight matrix");
    Tensor y(x.shape());
    auto xd = x.data();
    auto yd = y.data();
    const int C = channels_;
    for (std::size_t p = 0; p < xd.size(); p += C)
        for (int co = 0; co < C; ++co) {
            Real s = 0;
            for (int ci = 0; ci < C; ++ci) s += params_[static_cast<std::size_t>(co) * C + ci] * xd[p + ci];
            yd[p + co] = s;
        }
    logdet += pixel_count(x) * lu.log_abs_det();
    return y;
}

Tensor Conv1x1::inverse(const Tensor& y) const {
    require_channels(y, channels_, "conv1x1");
    const SmallLU lu(params_, channels_);
    if (lu.min_pivot() == 0) throw SingularKernelError("conv1x1: singular weight matrix");
    const std::vector<Real> inv = lu.inverse();
    Tensor x(y.shape());
    auto yd = y.data();
    auto xd = x.data();
    const int C = channels_;
    for (std::size_t p = 0; p < yd.size(); p += C)
        for (int ci = 0; ci < C; ++ci) {
            Real s = 0;
            for (int co = 0; co < C; ++co) s += inv[static_cast<std::size_t>(ci) * C + co] * yd[p + co];
            xd[p + ci] = s;
        }
    return x;
}

Tensor Conv1x1::backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                         std::span<Real> grad_params) const {
    require_channels(x, channels_, "conv1x1");
    const int C = channels_;
    Tensor gx(x.shape());
    auto xd = x.data();
    auto gy = grad_y.data();
    auto gd = gx.data();
    for (std::size_t p = 0; p < xd.size(); p += C)
        for (int co = 0; co < C; ++co) {
            const Real g = gy[p + co];
            for (int ci = 0; ci < C; ++ci) {
                gd[p + ci] += params_[static_cast<std::size_t>(co) * C + ci] * g;
                grad_params[static_cast<std::size_t>(co) * C + ci] += g * xd[p + ci];
            }
        }
    // d log|det W| / dW = W^{-T}
    const std::vector<Real> inv = SmallLU(params_, C).inverse();
    const Real hw = pixel_count(x);
    for (int co = 0; co < C; ++co)
        for (int ci = 0; ci < C; ++ci)
            grad_params[static_cast<std::size_t>(co) * C + ci] +=
                grad_logdet * hw * inv[static_cast<std::size_t>(ci) * C + co];
    return gx;
}

void Conv1x1::randomize(std::mt19937_64& rng, Real scale) { FlowLayer::randomize(rng, scale); }

// ---------------------------------------------------------------- InvConvLayer

InvConvLayer::InvConvLayer(int k, int channels, std::mt19937_64& rng, Real init_sigma)
    : k_(k), channels_(channels) {
    ConvKernel K = ConvKernel::identity(k, channels, KernelVariant::MaskedTriangular);
    std::normal_distribution<Real> normal(0, init_sigma);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b)
            for (int ci = 0; ci < channels; ++ci)
                for (int co = 0; co < channels; ++co) {
                    const bool diag = a == k - 1 && b == k - 1 && ci == co;
                    if (!diag && !K.masked(a, b, ci, co)) K(a, b, ci, co) = normal(rng);
                }
    const InvConvParams p = extract_params(K);
    params_ = p.free;
    params_.insert(params_.end(), p.log_mag.begin(), p.log_mag.end());
    signs_ = p.signs;
}

InvConvLayer::InvConvLayer(const InvConvParams& p) : k_(p.k), channels_(p.channels), signs_(p.signs) {
    if (p.orientation != KernelOrientation::TopLeft)
        throw std::invalid_argument("InvConvLayer: only top-left kernels are supported");
    if (p.free.size() != free_weight_count(p.k, p.channels) ||
        p.log_mag.size() != static_cast<std::size_t>(p.channels) ||
        p.signs.size() != static_cast<std::size_t>(p.channels))
        throw std::invalid_argument("InvConvLayer: parameter counts do not match k and C");
    params_ = p.free;
    params_.insert(params_.end(), p.log_mag.begin(), p.log_mag.end());
}

InvConvParams InvConvLayer::params() const {
    InvConvParams p;
    p.k = k_;
    p.channels = channels_;
    p.free.assign(params_.begin(), params_.begin() + static_cast<std::ptrdiff_t>(free_count()));
    p.log_mag.assign(params_.begin() + static_cast<std::ptrdiff_t>(free_count()), params_.end());
    p.signs = signs_;
    return p;
}

ConvKernel InvConvLayer::kernel() const { return reconstruct_kernel(params()); }

Real InvConvLayer::min_diagonal_magnitude() const {
    Real m = std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < static_cast<std::size_t>(channels_); ++c)
        m = std::min(m, std::exp(params_[free_count() + c]));
    return m;
}

Tensor InvConvLayer::forward(const Tensor& x, Real& logdet) const {
    require_channels(x, channels_, "invconv");
    Real s = 0;
    for (std::size_t c = 0; c < static_cast<std::size_t>(channels_); ++c) s += params_[free_count() + c];
    logdet += pixel_count(x) * s;
    return conv_forward(x, kernel());
}

Tensor InvConvLayer::inverse(const Tensor& y) const {
    require_channels(y, channels_, "invconv");
    return conv_inverse(y, kernel());
}

Tensor InvConvLayer::backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                              std::span<Real> grad_params) const {
    require_channels(x, channels_, "invconv");
    const ConvKernel K = kernel();
    const detail::ConvGeometry g{x.height(), x.width(), channels_, x.height(), x.width(), channels_,
                                 k_,          k_ - 1,    k_ - 1};
    Tensor gx(x.shape());
    detail::conv_adjoint_accumulate(g, grad_y.data().data(), K.weights().data(), gx.data().data());
    std::vector<Real> gk(K.weights().size(), 0);
    detail::conv_weight_grad_accumulate(g, x.data().data(), grad_y.data().data(), gk.data());

    const Real hw = pixel_count(x);
    std::size_t f = 0;
    for (int a = 0; a < k_; ++a)
        for (int b = 0; b < k_; ++b)
            for (int ci = 0; ci < channels_; ++ci)
                for (int co = 0; co < channels_; ++co) {
                    if (K.masked(a, b, ci, co)) continue;
                    const Real d = gk[K.index(a, b, ci, co)];
                    if (a == k_ - 1 && b == k_ - 1 && ci == co) {
                        // D[c,c] = sign * exp(log_mag): chain rule gives d * D[c,c].
                        grad_params[free_count() + static_cast<std::size_t>(ci)] +=
                            d * K(a, b, ci, co) + grad_logdet * hw;
                    } else {
                        grad_params[f++] += d;
                    }
                }
    return gx;
}

std::vector<Tensor> InvConvLayer::state() const {
    std::span<const Real> p = params_;
    return {row_tensor(p.first(free_count())), row_tensor(p.subspan(free_count())), row_tensor(signs_)};
}

void InvConvLayer::set_state(const std::vector<Tensor>& t) {
    const auto C = static_cast<std::size_t>(channels_);
    if (t.size() != 3 || t[0].size() != free_count() || t[1].size() != C || t[2].size() != C)
        throw std::invalid_argument("invconv: malformed state");
    std::copy(t[0].data().begin(), t[0].data().end(), params_.begin());
    std::copy(t[1].data().begin(), t[1].data().end(),
              params_.begin() + static_cast<std::ptrdiff_t>(free_count()));
    for (std::size_t c = 0; c < C; ++c) {
        const Real s = t[2].data()[c];
        if (s != 1 && s != -1) throw std::invalid_argument("invconv: diagonal signs must be +-1");
        signs_[c] = s;
    }
}

void InvConvLayer::randomize(std::mt19937_64& rng, Real scale) {
    FlowLayer::randomize(rng, scale);
    std::uniform_real_distribution<Real> unit(0, 1);
    for (auto& s : signs_) s = unit(rng) < 0.5 ? -1 : 1;
}

// ---------------------------------------------------------------- squeeze

Tensor squeeze(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("squeeze: expects a rank-3 image");
    if (x.height() % 2 != 0 || x.width() % 2 != 0)
        throw std::invalid_argument("squeeze: spatial dims must be even, got " + x.shape().str());
    const int C = x.channels();
    Tensor y({x.height() / 2, x.width() / 2, 4 * C});
    for (int i = 0; i < y.height(); ++i)
        for (int j = 0; j < y.width(); ++j)
            for (int c = 0; c < C; ++c)
                for (int s = 0; s < 4; ++s) y(i, j, 4 * c + s) = x(2 * i + s / 2, 2 * j + s % 2, c);
    return y;
}

Tensor unsqueeze(const Tensor& y) {
    if (y.rank() != 3 || y.channels() % 4 != 0)
        throw std::invalid_argument("unsqueeze: channels must be divisible by 4");
    const int C = y.channels() / 4;
    Tensor x({2 * y.height(), 2 * y.width(), C});
    for (int i = 0; i < y.height(); ++i)
        for (int j = 0; j < y.width(); ++j)
            for (int c = 0; c < C; ++c)
                for (int s = 0; s < 4; ++s) x(2 * i + s / 2, 2 * j + s % 2, c) = y(i, j, 4 * c + s);
    return x;
}

}  // namespace invflow
