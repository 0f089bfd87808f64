#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "invflow/invconv.hpp"
#include "invflow/tensor.hpp"

namespace invflow {

/// An invertible map on single (H, W, C) images with a tractable log-Jacobian.
///
/// Trainable parameters live in one flat vector so an optimizer can treat
/// every layer alike. backward() returns the gradient of a scalar objective
///   J = <grad_y, forward(x)> + grad_logdet * logdet(x)
/// with respect to x, and adds dJ/dparams into grad_params.
class FlowLayer {
public:
    virtual ~FlowLayer() = default;

    virtual std::string kind() const = 0;
    virtual std::unique_ptr<FlowLayer> clone() const = 0;

    /// Returns y and adds log|det dy/dx| to logdet.
    virtual Tensor forward(const Tensor& x, Real& logdet) const = 0;
    virtual Tensor inverse(const Tensor& y) const = 0;
    virtual Tensor backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                            std::span<Real> grad_params) const = 0;

    std::span<Real> parameters() { return params_; }
    std::span<const Real> parameters() const { return params_; }
    std::size_t parameter_count() const { return params_.size(); }

    /// Everything needed to restore the layer, as raw tensors.
    virtual std::vector<Tensor> state() const;
    virtual void set_state(const std::vector<Tensor>& tensors);

    /// Perturbs every trainable parameter so the layer is no longer the
    /// identity. Used by tests and oracles.
    virtual void randomize(std::mt19937_64& rng, Real scale);

protected:
    std::vector<Real> params_;
};

/// Per-channel affine map y = s * (x + b) with s = sign * exp(log_scale).
/// Parameters: [log_scale (C), bias (C)]; signs are fixed.
class ActNorm : public FlowLayer {
public:
    explicit ActNorm(int channels);

    std::string kind() const override { return "actnorm"; }
    std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<ActNorm>(*this); }

    Tensor forward(const Tensor& x, Real& logdet) const override;
    Tensor inverse(const Tensor& y) const override;
    Tensor backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                    std::span<Real> grad_params) const override;

    /// Data-dependent initialization: afterwards the batch has per-channel
    /// mean 0 and variance 1 at the output.
    void initialize(const std::vector<Tensor>& batch);
    /// Marks the layer initialized with its current parameters.
    void mark_initialized() { initialized_ = true; }
    bool initialized() const { return initialized_; }

    int channels() const { return channels_; }
    Real scale(int c) const;
    Real bias(int c) const { return params_[channels_ + c]; }
    void set_scale(int c, Real s);
    void set_bias(int c, Real b) { params_[channels_ + c] = b; }

    std::vector<Tensor> state() const override;
    void set_state(const std::vector<Tensor>& tensors) override;

private:
    void require_initialized() const;

    int channels_;
    std::vector<Real> signs_;
    bool initialized_ = false;
};

/// Glow's invertible 1x1 convolution: y[p] = W x[p] at every pixel p.
/// Parameters: W, row-major C x C with W[co][ci].
class Conv1x1 : public FlowLayer {
public:
    explicit Conv1x1(int channels);
    /// Random rotation initialization.
    Conv1x1(int channels, std::mt19937_64& rng);

    std::string kind() const override { return "conv1x1"; }
    std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<Conv1x1>(*this); }

    Tensor forward(const Tensor& x, Real& logdet) const override;
    Tensor inverse(const Tensor& y) const override;
    Tensor backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                    std::span<Real> grad_params) const override;

    int channels() const { return channels_; }
    std::span<Real> matrix() { return params_; }
    std::span<const Real> matrix() const { return params_; }

    void randomize(std::mt19937_64& rng, Real scale) override;

private:
    int channels_;
};

/// Single-pass invertible k x k convolution with a masked triangular diagonal
/// tap. Parameters: [free weights..., log_mag (C)]; diagonal entries are
/// sign_c * exp(log_mag_c) with frozen signs, so the layer can never become
/// singular during training.
class InvConvLayer : public FlowLayer {
public:
    /// Identity diagonal, other taps ~ N(0, init_sigma^2).
    InvConvLayer(int k, int channels, std::mt19937_64& rng, Real init_sigma = 0.05);
    explicit InvConvLayer(const InvConvParams& p);

    std::string kind() const override { return "invconv"; }
    std::unique_ptr<FlowLayer> clone() const override {
        return std::make_unique<InvConvLayer>(*this);
    }

    Tensor forward(const Tensor& x, Real& logdet) const override;
    Tensor inverse(const Tensor& y) const override;
    Tensor backward(const Tensor& x, const Tensor& grad_y, Real grad_logdet,
                    std::span<Real> grad_params) const override;

    InvConvParams params() const;
    ConvKernel kernel() const;
    int window() const { return k_; }
    int channels() const { return channels_; }
    /// Smallest |D[c,c]| of the current kernel.
    Real min_diagonal_magnitude() const;

    std::vector<Tensor> state() const override;
    void set_state(const std::vector<Tensor>& tensors) override;
    void randomize(std::mt19937_64& rng, Real scale) override;

private:
    std::size_t free_count() const { return params_.size() - static_cast<std::size_t>(channels_); }

    int k_;
    int channels_;
    std::vector<Real> signs_;
};

/// 2x2 space-to-depth: (H, W, C) -> (H/2, W/2, 4C). Output channel 4c + s
/// holds sub-pixel s of input channel c, with s = 0 top-left, 1 top-right,
/// 2 bottom-left, 3 bottom-right.
Tensor squeeze(const Tensor& x);
Tensor unsqueeze(const Tensor& y);

class Squeeze : public FlowLayer {
public:
    std::string kind() const override { return "squeeze"; }
    std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<Squeeze>(*this); }
    Tensor forward(const Tensor& x, Real&) const override { return squeeze(x); }
    Tensor inverse(const Tensor& y) const override { return unsqueeze(y); }
    Tensor backward(const Tensor&, const Tensor& grad_y, Real, std::span<Real>) const override {
        return unsqueeze(grad_y);
    }
};

}  // namespace invflow
