#include "invflow/coupling.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "conv_ops.hpp"

namespace invflow {

namespace {

constexpr Real kHalfLog2Pi = Real(0.91893853320467274178);  // 0.5 * log(2 pi)

detail::ConvGeometry same_geometry(const Conv2dSpec& s, const Tensor& x) {
    const int p = (s.k - 1) / 2;
    return {x.height(), x.width(), s.cin, x.height(), x.width(), s.cout, s.k, p, p};
}

void relu_inplace(Tensor& t) {
    for (Real& v : t.data()) v = v > 0 ? v : 0;
}

// grad *= (pre > 0)
void relu_mask(Tensor& grad, const Tensor& pre) {
    auto g = grad.data();
    auto p = pre.data();
    for (std::size_t q = 0; q < g.size(); ++q)
        if (!(p[q] > 0)) g[q] = 0;
}

}  // namespace

// ---------------------------------------------------------------- Conv2dSpec

Tensor Conv2dSpec::forward(std::span<const Real> params, const Tensor& x) const {
    if (x.rank() != 3 || x.channels() != cin)
        throw std::invalid_argument("conv2d: expected " + std::to_string(cin) + " input channels, got " +
                                    x.shape().str());
    Tensor y({x.height(), x.width(), cout});
    const Real* w = params.data() + offset;
    const Real* bias = w + weight_count();
    auto yd = y.data();
    for (std::size_t q = 0; q < yd.size(); ++q) yd[q] = bias[q % cout];
    detail::conv_accumulate(same_geometry(*this, x), x.data().data(), w, yd.data());
    return y;
}

Tensor Conv2dSpec::backward(std::span<const Real> params, const Tensor& x, const Tensor& grad_y,
                            std::span<Real> grad) const {
    const auto g = same_geometry(*this, x);
    const Real* w = params.data() + offset;
    Real* gw = grad.data() + offset;
    Real* gb = gw + weight_count();
    Tensor gx(x.shape());
    detail::conv_adjoint_accumulate(g, grad_y.data().data(), w, gx.data().data());
    detail::conv_weight_grad_accumulate(g, x.data().data(), grad_y.data().data(), gw);
    auto gy = grad_y.data();
    for (std::size_t q = 0; q < gy.size(); ++q) gb[q % cout] += gy[q];
    return gx;
}

// ---------------------------------------------------------------- CouplingNet

CouplingNet::CouplingNet(int cin, int cout, int hidden, Real scale_bound, std::size_t offset)
    : bound_(scale_bound) {
    if (cin < 1 || cout < 1 || hidden < 1)
        throw std::invalid_argument("CouplingNet: channel counts must be positive");
    conv1_ = {3, cin, hidden, offset};
    conv2_ = {1, hidden, hidden, conv1_.offset + conv1_.size()};
    conv3_ = {3, hidden, 2 * cout, conv2_.offset + conv2_.size()};
}

void CouplingNet::initialize(std::span<Real> params, std::mt19937_64& rng) const {
    auto fill = [&](const Conv2dSpec& s) {
        std::normal_distribution<Real> normal(0, 1 / std::sqrt(static_cast<Real>(s.k * s.k * s.cin)));
        for (std::size_t q = 0; q < s.weight_count(); ++q) params[s.offset + q] = normal(rng);
        for (std::size_t q = s.weight_count(); q < s.size(); ++q) params[s.offset + q] = 0;
    };
    fill(conv1_);
    fill(conv2_);
    std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(conv3_.offset), conv3_.size(), Real(0));
}

CouplingNet::Output CouplingNet::forward(std::span<const Real> params, const Tensor& h,
                                         Activations* cache) const {
    Tensor a1 = conv1_.forward(params, h);
    Tensor r1 = a1;
    relu_inplace(r1);
    Tensor a2 = conv2_.forward(params, r1);
    Tensor r2 = a2;
    relu_inplace(r2);
    Tensor out = conv3_.forward(params, r2);
    const int c = out_channels();
    Output o{slice_channels(out, 0, c), slice_channels(out, c, 2 * c)};
    for (Real& v : o.log_scale.data()) v = bound_ * std::tanh(v);
    if (cache) *cache = {std::move(a1), std::move(a2), std::move(out)};
    return o;
}

Tensor CouplingNet::backward(std::span<const Real> params, const Tensor& h, const Activations& cache,
                             const Tensor& grad_shift, const Tensor& grad_log_scale,
                             std::span<Real> grad) const {
    const int c = out_channels();
    Tensor graw = grad_log_scale;
    {
        const Tensor raw = slice_channels(cache.out, c, 2 * c);
        auto g = graw.data();
        auto r = raw.data();
        for (std::size_t q = 0; q < g.size(); ++q) {
            const Real t = std::tanh(r[q]);
            g[q] *= bound_ * (1 - t * t);
        }
    }
    const Tensor gout = concat_channels({grad_shift, graw});

    Tensor r2 = cache.a2;
    relu_inplace(r2);
    Tensor g2 = conv3_.backward(params, r2, gout, grad);
    relu_mask(g2, cache.a2);
    Tensor r1 = cache.a1;
    relu_inplace(r1);
    Tensor g1 = conv2_.backward(params, r1, g2, grad);
    relu_mask(g1, cache.a1);
    return conv1_.backward(params, h, g1, grad);
}

// ---------------------------------------------------------------- BlockCoupling

BlockCoupling::BlockCoupling(int channels, int blocks, int hidden, Real scale_bound,
                             std::mt19937_64& rng)
    : channels_(channels), blocks_(blocks), hidden_(hidden) {
    if (blocks < 2) throw std::invalid_argument("coupling: need at least two blocks");
    if (channels < blocks || channels % blocks != 0)
        throw std::invalid_argument("coupling: " + std::to_string(channels) +
                                    " channels are not divisible into " + std::to_string(blocks) +
                                    " blocks");
    const int bs = channels / blocks;
    std::size_t offset = 0;
    for (int b = 1; b < blocks; ++b) {
        nets_.emplace_back(b * bs, bs, hidden, scale_bound, offset);
        offset += nets_.back().size();
    }
    params_.assign(offset, 0);
    for (const auto& n : nets_) n.initialize(params_, rng);
}

std::string BlockCoupling::kind() const {
    if (blocks_ == 2) return "affine_coupling";
    if (blocks_ == 4) return "quad_coupling";
    return "coupling" + std::to_string(blocks_);
}

std::span<Real> BlockCoupling::net_parameters(int b) {
    const auto& n = nets_[static_cast<std::size_t>(b)];
    return std::span<Real>(params_).subspan(n.offset(), n.size());
}

Tensor BlockCoupling::forward(const Tensor& x, Real& logdet) const {
    if (x.rank() != 3 || x.channels() != channels_)
        throw std::invalid_argument(kind() + ": expected " + std::to_string(channels_) +
                                    " channels, got " + x.shape().str());
    const auto xs = split_channels(x, blocks_);
    std::vector<Tensor> ys{xs[0]};
    for (int b = 1; b < blocks_; ++b) {
        const Tensor h = concat_channels({xs.begin(), xs.begin() + b});
        const auto o = nets_[static_cast<std::size_t>(b - 1)].forward(params_, h);
        Tensor y = xs[static_cast<std::size_t>(b)];
        auto yd = y.data();
        auto f = o.shift.data();
        auto g = o.log_scale.data();
        for (std::size_t q = 0; q < yd.size(); ++q) {
            yd[q] = (yd[q] + f[q]) * std::exp(g[q]);
            logdet += g[q];
        }
        ys.push_back(std::move(y));
    }
    return concat_channels(ys);
}

Tensor BlockCoupling::inverse(const Tensor& y) const {
    if (y.rank() != 3 || y.channels() != channels_)
        throw std::invalid_argument(kind() + ": channel mismatch in inverse");
    const auto ys = split_channels(y, blocks_);
    std::vector<Tensor> xs{ys[0]};
    for (int b = 1; b < blocks_; ++b) {
        const Tensor h = concat_channels(xs);
        const auto o = nets_[static_cast<std::size_t>(b - 1)].forward(params_, h);
        Tensor x = ys[static_cast<std::size_t>(b)];
        auto xd = x.data();
        auto f = o.shift.data();
        auto g = o.log_scale.data();
        for (std::size_t q = 0; q < xd.size(); ++q) xd[q] = xd[q] * std::exp(-g[q]) - f[q];
        xs.push_back(std::move(x));
    }
    return concat_channels(xs);
}

Tensor BlockCoupling::backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                               std::span<Real> grad_params) const {
    const auto xs = split_channels(x, blocks_);
    const auto gys = split_channels(grad_y, blocks_);
    const int bs = channels_ / blocks_;
    std::vector<Tensor> gxs;
    gxs.push_back(gys[0]);
    for (int b = 1; b < blocks_; ++b) gxs.emplace_back(xs[static_cast<std::size_t>(b)].shape());

    for (int b = 1; b < blocks_; ++b) {
        const auto& net = nets_[static_cast<std::size_t>(b - 1)];
        const Tensor h = concat_channels({xs.begin(), xs.begin() + b});
        CouplingNet::Activations cache;
        const auto o = net.forward(params_, h, &cache);
        Tensor gf(o.shift.shape());
        Tensor gg(o.shift.shape());
        auto xb = xs[static_cast<std::size_t>(b)].data();
        auto gy = gys[static_cast<std::size_t>(b)].data();
        auto f = o.shift.data();
        auto g = o.log_scale.data();
        auto gx = gxs[static_cast<std::size_t>(b)].data();
        auto gfd = gf.data();
        auto ggd = gg.data();
        for (std::size_t q = 0; q < xb.size(); ++q) {
            const Real e = std::exp(g[q]);
            const Real y = (xb[q] + f[q]) * e;
            gx[q] += gy[q] * e;
            gfd[q] = gy[q] * e;
            ggd[q] = gy[q] * y + grad_logdet;
        }
        const Tensor gh = net.backward(params_, h, cache, gf, gg, grad_params);
        for (int p = 0; p < b; ++p) {
            const Tensor part = slice_channels(gh, p * bs, (p + 1) * bs);
            gxs[static_cast<std::size_t>(p)] = add(gxs[static_cast<std::size_t>(p)], part);
        }
    }
    return concat_channels(gxs);
}

AffineCoupling::AffineCoupling(int channels, int hidden, Real scale_bound, std::mt19937_64& rng)
    : BlockCoupling(channels, 2, hidden, scale_bound, rng) {}

QuadCoupling::QuadCoupling(int channels, int hidden, Real scale_bound, std::mt19937_64& rng)
    : BlockCoupling(channels, 4, hidden, scale_bound, rng) {}

// ---------------------------------------------------------------- SplitPrior

SplitPrior::SplitPrior(int channels) : channels_(channels) {
    if (channels < 2 || channels % 2 != 0)
        throw std::invalid_argument("split: channel count must be even, got " + std::to_string(channels));
    conv_ = {3, channels / 2, channels, 0};
    params_.assign(conv_.size(), 0);
}

std::pair<Tensor, Tensor> SplitPrior::moments(const Tensor& keep) const {
    const Tensor out = conv_.forward(params_, keep);
    const int cz = channels_ / 2;
    return {slice_channels(out, 0, cz), slice_channels(out, cz, 2 * cz)};
}

SplitPrior::Result SplitPrior::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.channels() != channels_)
        throw std::invalid_argument("split: expected " + std::to_string(channels_) + " channels");
    Result r;
    r.keep = slice_channels(x, 0, channels_ / 2);
    r.z = slice_channels(x, channels_ / 2, channels_);
    const auto [mu, log_sigma] = moments(r.keep);
    auto z = r.z.data();
    auto m = mu.data();
    auto ls = log_sigma.data();
    Real lp = 0;
    for (std::size_t q = 0; q < z.size(); ++q) {
        const Real eps = (z[q] - m[q]) * std::exp(-ls[q]);
        lp += -kHalfLog2Pi - ls[q] - Real(0.5) * eps * eps;
    }
    r.logp = lp;
    return r;
}

Tensor SplitPrior::inverse(const Tensor& keep, const Tensor& z) const { return concat_channels({keep, z}); }

Tensor SplitPrior::sample(const Tensor& keep, std::mt19937_64& rng, Real temperature) const {
    const auto [mu, log_sigma] = moments(keep);
    std::normal_distribution<Real> normal(0, 1);
    Tensor z(mu.shape());
    auto zd = z.data();
    auto m = mu.data();
    auto ls = log_sigma.data();
    for (std::size_t q = 0; q < zd.size(); ++q) zd[q] = m[q] + temperature * std::exp(ls[q]) * normal(rng);
    return z;
}

Tensor SplitPrior::standardize(const Tensor& keep, const Tensor& z) const {
    const auto [mu, log_sigma] = moments(keep);
    Tensor eps = z;
    auto e = eps.data();
    auto m = mu.data();
    auto ls = log_sigma.data();
    for (std::size_t q = 0; q < e.size(); ++q) e[q] = (e[q] - m[q]) * std::exp(-ls[q]);
    return eps;
}

Real SplitPrior::sum_log_sigma(const Tensor& keep) const { return sum(moments(keep).second); }

std::pair<Tensor, Tensor> SplitPrior::backward(const Tensor& keep, const Tensor& z, Real scale,
                                               std::span<Real> grad) const {
    const auto [mu, log_sigma] = moments(keep);
    Tensor gz(z.shape());
    Tensor gmu(z.shape());
    Tensor gls(z.shape());
    auto zd = z.data();
    auto m = mu.data();
    auto ls = log_sigma.data();
    for (std::size_t q = 0; q < zd.size(); ++q) {
        const Real inv_sigma = std::exp(-ls[q]);
        const Real eps = (zd[q] - m[q]) * inv_sigma;
        gz.data()[q] = -scale * eps * inv_sigma;
        gmu.data()[q] = scale * eps * inv_sigma;
        gls.data()[q] = scale * (eps * eps - 1);
    }
    Tensor gkeep = conv_.backward(params_, keep, concat_channels({gmu, gls}), grad);
    return {std::move(gkeep), std::move(gz)};
}

void SplitPrior::randomize(std::mt19937_64& rng, Real scale) {
    std::normal_distribution<Real> normal(0, scale);
    for (Real& p : params_) p += normal(rng);
}

Real standard_normal_logp(const Tensor& z) {
    Real s = 0;
    for (Real v : z.data()) s += -kHalfLog2Pi - Real(0.5) * v * v;
    return s;
}

}  // namespace invflow
