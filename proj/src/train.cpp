#include "invflow/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "invflow/datasets.hpp"

namespace invflow {

Adam::Adam(std::size_t n, Real lr, Real beta1, Real beta2, Real eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0), v_(n, 0) {}

void Adam::step(std::span<Real> params, std::span<const Real> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
        throw std::invalid_argument("adam: size mismatch");
    for (std::size_t q = 0; q < grad.size(); ++q)
        if (!std::isfinite(grad[q]))
            throw DivergenceError("adam: non-finite gradient at parameter " + std::to_string(q));
    ++t_;
    const Real c1 = 1 - std::pow(beta1_, static_cast<Real>(t_));
    const Real c2 = 1 - std::pow(beta2_, static_cast<Real>(t_));
    for (std::size_t q = 0; q < grad.size(); ++q) {
        m_[q] = beta1_ * m_[q] + (1 - beta1_) * grad[q];
        v_[q] = beta2_ * v_[q] + (1 - beta2_) * grad[q] * grad[q];
        params[q] -= lr_ * (m_[q] / c1) / (std::sqrt(v_[q] / c2) + eps_);
    }
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t t = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(t);
    for (std::size_t w = 0; w < t; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w * n / t; i < (w + 1) * n / t; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

EvalResult evaluate(const FlowModel& model, const std::vector<Tensor>& pixels, std::uint64_t seed,
                    int threads) {
    if (pixels.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::mt19937_64 rng(seed);
    std::vector<Tensor> xs;
    xs.reserve(pixels.size());
    for (const auto& p : pixels) {
        if (p.shape() != model.config().input_shape())
            throw std::invalid_argument("evaluate: image shape " + p.shape().str() +
                                        " does not match model input " +
                                        model.config().input_shape().str());
        xs.push_back(dequantize(p, rng));
    }
    std::vector<Real> logp(xs.size());
    parallel_for(xs.size(), threads, [&](std::size_t i) { logp[i] = model.log_prob(xs[i]); });
    Real total = 0;
    for (Real v : logp) total += v;
    const Real mean = total / static_cast<Real>(xs.size());
    return {-mean, bits_per_dim(mean, model.config().input_shape().size())};
}

namespace {
constexpr std::size_t kChunk = 8;
}

Real batch_gradient(const FlowModel& model, const std::vector<Tensor>& batch, std::span<Real> grad,
                    int threads) {
    if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
    const std::size_t p = model.parameter_count();
    if (grad.size() != p) throw std::invalid_argument("batch_gradient: gradient size mismatch");
    const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
    std::vector<std::vector<Real>> partial(chunks, std::vector<Real>(p, 0));
    std::vector<Real> losses(chunks, 0);
    parallel_for(chunks, threads, [&](std::size_t c) {
        for (std::size_t i = c * kChunk; i < std::min(batch.size(), (c + 1) * kChunk); ++i)
            losses[c] += model.accumulate_gradient(batch[i], partial[c]);
    });
    const Real inv = Real(1) / static_cast<Real>(batch.size());
    std::fill(grad.begin(), grad.end(), Real(0));
    Real loss = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        loss += losses[c];
        for (std::size_t q = 0; q < p; ++q) grad[q] += partial[c][q];
    }
    for (Real& g : grad) g *= inv;
    return loss * inv;
}

TrainResult train(FlowModel& model, const std::vector<Tensor>& pixels, const TrainOptions& opt,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
    if (pixels.empty()) throw std::invalid_argument("train: empty dataset");
    if (opt.epochs < 0 || opt.batch_size < 1) throw std::invalid_argument("train: bad epochs or batch size");
    for (const auto& p : pixels)
        if (p.shape() != model.config().input_shape())
            throw std::invalid_argument("train: image shape " + p.shape().str() +
                                        " does not match model input " +
                                        model.config().input_shape().str());

    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    auto elapsed = [&] {
        return opt.log_wall_time ? std::chrono::duration<Real>(clock::now() - start).count() : Real(0);
    };

    std::mt19937_64 rng(opt.seed);
    std::vector<std::size_t> order(pixels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t bs = std::min(order.size(), static_cast<std::size_t>(opt.batch_size));

    if (opt.identity_init) model.make_identity();
    if (opt.actnorm_init == ActNormInit::Data) {
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<Tensor> init;
        for (std::size_t i = 0; i < bs; ++i) init.push_back(dequantize(pixels[order[i]], rng));
        model.data_init(init);
    } else {
        model.initialize_identity_actnorm();
    }

    TrainResult result;
    const auto e0 = evaluate(model, pixels, opt.eval_seed, opt.threads);
    result.initial = {0, e0.nll, e0.bpd, elapsed(), 0};
    if (on_epoch) on_epoch(result.initial);

    const std::size_t p = model.parameter_count();
    Adam adam(p, opt.learning_rate);
    std::vector<Real> params = model.get_parameters();
    std::vector<Real> grad(p, 0);

    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        const std::vector<Real> epoch_start = params;
        std::shuffle(order.begin(), order.end(), rng);
        Real norm_sum = 0;
        int steps = 0;
        for (std::size_t b = 0; b < order.size(); b += bs) {
            std::vector<Tensor> batch;
            for (std::size_t i = b; i < std::min(order.size(), b + bs); ++i)
                batch.push_back(dequantize(pixels[order[i]], rng));
            const Real loss = batch_gradient(model, batch, grad, opt.threads);
            Real norm = 0;
            for (Real g : grad) norm += g * g;
            norm = std::sqrt(norm);
            if (!std::isfinite(loss) || !std::isfinite(norm)) {
                result.diverged = true;
                result.message = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(steps + 1);
                model.set_parameters(params);
                return result;
            }
            if (opt.clip_norm > 0 && norm > opt.clip_norm)
                for (Real& g : grad) g *= opt.clip_norm / norm;
            std::vector<Real> next = params;
            adam.step(next, grad);
            if (!std::all_of(next.begin(), next.end(), [](Real v) { return std::isfinite(v); })) {
                result.diverged = true;
                result.message = "non-finite parameters after epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(steps + 1);
                return result;
            }
            model.set_parameters(next);
            if (!(model.min_invconv_diagonal() > 1e-12))
                throw std::logic_error("train: invertible convolution lost its diagonal");
            params = std::move(next);
            norm_sum += norm;
            ++steps;
        }
        const auto ev = evaluate(model, pixels, opt.eval_seed, opt.threads);
        EpochMetrics m{epoch, ev.nll, ev.bpd, elapsed(), steps ? norm_sum / steps : 0};
        if (!std::isfinite(ev.nll)) {
            result.diverged = true;
            result.message = "non-finite evaluation loss after epoch " + std::to_string(epoch);
            model.set_parameters(epoch_start);
            return result;
        }
        result.epochs.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return result;
}

std::string metrics_csv_header() { return "epoch,nll,bpd,wall_seconds,grad_norm"; }

std::string metrics_csv_row(const EpochMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.10f,%.10f,%.3f,%.8f", m.epoch, static_cast<double>(m.nll),
                  static_cast<double>(m.bpd), static_cast<double>(m.wall_seconds),
                  static_cast<double>(m.grad_norm));
    return buf;
}

}  // namespace invflow
