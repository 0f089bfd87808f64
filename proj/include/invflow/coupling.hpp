#pragma once

#include <memory>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "invflow/layers.hpp"
#include "invflow/tensor.hpp"

namespace invflow {

/// Same-padded k x k convolution with bias that reads its weights from a
/// slice of a parent parameter vector: [weights (k*k*cin*cout), bias (cout)].
struct Conv2dSpec {
    int k = 3;
    int cin = 0;
    int cout = 0;
    std::size_t offset = 0;

    std::size_t weight_count() const { return static_cast<std::size_t>(k) * k * cin * cout; }
    std::size_t size() const { return weight_count() + static_cast<std::size_t>(cout); }

    Tensor forward(std::span<const Real> params, const Tensor& x) const;
    /// Returns dJ/dx; adds dJ/dweights and dJ/dbias into grad.
    Tensor backward(std::span<const Real> params, const Tensor& x, const Tensor& grad_y,
                    std::span<Real> grad) const;
};

/// conv 3x3 -> ReLU -> conv 1x1 -> ReLU -> conv 3x3 producing a shift f and a
/// bounded log-scale g = bound * tanh(raw). The last convolution starts at
/// zero so that f = g = 0 at initialization.
class CouplingNet {
public:
    CouplingNet(int cin, int cout, int hidden, Real scale_bound, std::size_t offset);

    std::size_t size() const { return conv3_.offset + conv3_.size() - conv1_.offset; }
    std::size_t offset() const { return conv1_.offset; }
    int in_channels() const { return conv1_.cin; }
    int out_channels() const { return conv3_.cout / 2; }

    void initialize(std::span<Real> params, std::mt19937_64& rng) const;

    struct Activations {
        Tensor a1, a2, out;
    };
    struct Output {
        Tensor shift;
        Tensor log_scale;
    };
    Output forward(std::span<const Real> params, const Tensor& h, Activations* cache = nullptr) const;
    /// Returns dJ/dh for J with dJ/dshift = grad_shift and dJ/dlog_scale = grad_log_scale.
    Tensor backward(std::span<const Real> params, const Tensor& h, const Activations& cache,
                    const Tensor& grad_shift, const Tensor& grad_log_scale,
                    std::span<Real> grad) const;

private:
    Conv2dSpec conv1_, conv2_, conv3_;
    Real bound_;
};

/// Autoregressive coupling over `blocks` equal channel groups x_1..x_B:
///   y_1 = x_1,  y_b = (x_b + f_b(x_1..x_{b-1})) * exp(g_b(x_1..x_{b-1})).
/// B = 2 is the affine coupling layer and B = 4 is quad-coupling.
class BlockCoupling : public FlowLayer {
public:
    BlockCoupling(int channels, int blocks, int hidden, Real scale_bound, std::mt19937_64& rng);

    std::string kind() const override;
    std::unique_ptr<FlowLayer> clone() const override {
        return std::make_unique<BlockCoupling>(*this);
    }

    Tensor forward(const Tensor& x, Real& logdet) const override;
    Tensor inverse(const Tensor& y) const override;
    Tensor backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                    std::span<Real> grad_params) const override;

    int channels() const { return channels_; }
    int blocks() const { return blocks_; }
    int hidden() const { return hidden_; }
    /// Network producing block b + 1 from blocks 0..b (0-based b).
    const CouplingNet& net(int b) const { return nets_[static_cast<std::size_t>(b)]; }
    std::span<Real> net_parameters(int b);

private:
    int channels_;
    int blocks_;
    int hidden_;
    std::vector<CouplingNet> nets_;
};

/// y_1 = x_1, y_2 = (x_2 + f(x_1)) * exp(g(x_1)) with x split into channel halves.
class AffineCoupling : public BlockCoupling {
public:
    AffineCoupling(int channels, int hidden, Real scale_bound, std::mt19937_64& rng);
    std::unique_ptr<FlowLayer> clone() const override {
        return std::make_unique<AffineCoupling>(*this);
    }
};

/// Four-block coupling: x_1 unchanged, x_2, x_3, x_4 updated in turn from
/// all preceding input blocks.
class QuadCoupling : public BlockCoupling {
public:
    QuadCoupling(int channels, int hidden, Real scale_bound, std::mt19937_64& rng);
    std::unique_ptr<FlowLayer> clone() const override {
        return std::make_unique<QuadCoupling>(*this);
    }
};

/// Factors out the second channel half z of x and scores it under
/// N(mu(keep), exp(log_sigma(keep))^2), where (mu, log_sigma) come from a
/// zero-initialized 3x3 convolution of the retained half.
class SplitPrior {
public:
    explicit SplitPrior(int channels);

    struct Result {
        Tensor keep;
        Tensor z;
        Real logp = 0;
    };
    Result forward(const Tensor& x) const;
    /// concat(keep, z)
    Tensor inverse(const Tensor& keep, const Tensor& z) const;
    /// z = mu + temperature * sigma * eps, eps ~ N(0, I).
    Tensor sample(const Tensor& keep, std::mt19937_64& rng, Real temperature) const;
    /// eps = (z - mu) / sigma. The map x -> (keep, eps) is a bijection with
    /// log-Jacobian -sum(log_sigma).
    Tensor standardize(const Tensor& keep, const Tensor& z) const;
    Real sum_log_sigma(const Tensor& keep) const;

    /// Gradients of scale * logp(z | keep): returns (d/dkeep, d/dz) and adds
    /// the parameter gradient into grad.
    std::pair<Tensor, Tensor> backward(const Tensor& keep, const Tensor& z, Real scale,
                                       std::span<Real> grad) const;

    int channels() const { return channels_; }
    std::span<Real> parameters() { return params_; }
    std::span<const Real> parameters() const { return params_; }
    std::size_t parameter_count() const { return params_.size(); }
    void randomize(std::mt19937_64& rng, Real scale);

private:
    std::pair<Tensor, Tensor> moments(const Tensor& keep) const;

    int channels_;
    Conv2dSpec conv_;
    std::vector<Real> params_;
};

/// Sum over elements of the standard normal log-density.
Real standard_normal_logp(const Tensor& z);

}  // namespace invflow
