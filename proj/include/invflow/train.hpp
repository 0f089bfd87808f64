#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "invflow/model.hpp"

namespace invflow {

/// Raised when a loss or gradient stops being finite.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Adam {
public:
    explicit Adam(std::size_t n, Real lr = 1e-3, Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8);

    /// One update. Throws DivergenceError if any gradient entry is not finite;
    /// params are left untouched in that case.
    void step(std::span<Real> params, std::span<const Real> grad);

    std::size_t steps() const { return t_; }
    Real learning_rate() const { return lr_; }
    const std::vector<Real>& first_moment() const { return m_; }
    const std::vector<Real>& second_moment() const { return v_; }

private:
    Real lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Real> m_, v_;
};

enum class ActNormInit : std::uint8_t { Data, Identity };

struct TrainOptions {
    int epochs = 50;
    int batch_size = 64;
    Real learning_rate = 1e-3;
    std::uint64_t seed = 0;
    int threads = 1;
    Real clip_norm = 50;
    ActNormInit actnorm_init = ActNormInit::Data;
    bool identity_init = false;  // start every layer at the identity map
    std::uint64_t eval_seed = 12345;  // dequantization noise for evaluation
    bool log_wall_time = true;         // false writes 0 so metrics files are reproducible
};

struct EvalResult {
    Real nll = 0;  // mean -log p(x) in nats per image
    Real bpd = 0;
};

/// Mean NLL and bpd over the images, dequantized with a generator seeded by
/// `seed`. The per-image results are summed in index order, so the value
/// does not depend on the thread count.
EvalResult evaluate(const FlowModel& model, const std::vector<Tensor>& pixels, std::uint64_t seed,
                    int threads = 1);

/// Gradient of the batch mean of -log p(x) over already dequantized inputs.
/// Returns the mean loss. Work is split into fixed chunks and reduced in
/// chunk order, independent of the thread count.
Real batch_gradient(const FlowModel& model, const std::vector<Tensor>& batch, std::span<Real> grad,
                    int threads = 1);

struct EpochMetrics {
    int epoch = 0;
    Real nll = 0;
    Real bpd = 0;
    Real wall_seconds = 0;  // cumulative since training started
    Real grad_norm = 0;     // mean pre-clipping gradient norm over the epoch
};

struct TrainResult {
    EpochMetrics initial;              // evaluation before the first update
    std::vector<EpochMetrics> epochs;  // one entry per finished epoch
    bool diverged = false;
    std::string message;
};

/// Maximum-likelihood training with Adam. Each epoch visits the data in a
/// seeded random order; after it, the whole dataset is evaluated with the
/// fixed evaluation seed. A non-finite loss or gradient stops training with
/// the parameters of the last good step restored. on_epoch sees the
/// epoch-0 evaluation first, then every finished epoch.
TrainResult train(FlowModel& model, const std::vector<Tensor>& pixels, const TrainOptions& options,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// "epoch,nll,bpd,wall_seconds,grad_norm"
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

/// Runs fn(i) for i in [0, n) on up to `threads` threads with static
/// contiguous partitioning.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace invflow
