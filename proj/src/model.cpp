#include "invflow/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace invflow {

std::string to_string(CouplingKind k) { return k == CouplingKind::Affine ? "affine" : "quad"; }
std::string to_string(MixerKind k) { return k == MixerKind::InvConv ? "invconv" : "conv1x1"; }

CouplingKind parse_coupling(const std::string& s) {
    if (s == "affine") return CouplingKind::Affine;
    if (s == "quad") return CouplingKind::Quad;
    throw std::invalid_argument("unknown coupling '" + s + "' (expected affine or quad)");
}

MixerKind parse_mixer(const std::string& s) {
    if (s == "invconv") return MixerKind::InvConv;
    if (s == "conv1x1") return MixerKind::Conv1x1;
    throw std::invalid_argument("unknown mixer '" + s + "' (expected invconv or conv1x1)");
}

void ModelConfig::validate() const {
    if (height < 1 || width < 1 || channels < 1)
        throw std::invalid_argument("model: image shape must be positive");
    if (levels < 1) throw std::invalid_argument("model: need at least one level");
    if (depth < 0) throw std::invalid_argument("model: depth must be non-negative");
    if (hidden < 1) throw std::invalid_argument("model: hidden width must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw std::invalid_argument("model: kernel_size must be odd");
    if (!(scale_bound > 0)) throw std::invalid_argument("model: scale_bound must be positive");
    const int blocks = coupling == CouplingKind::Quad ? 4 : 2;
    Shape s = input_shape();
    for (int l = 0; l < levels; ++l) {
        if (squeeze) {
            if (s.h % 2 != 0 || s.w % 2 != 0)
                throw std::invalid_argument("model: level " + std::to_string(l) +
                                            " cannot squeeze shape " + s.str());
            s = {s.h / 2, s.w / 2, 4 * s.c};
        }
        if (depth > 0 && s.c % blocks != 0)
            throw std::invalid_argument("model: level " + std::to_string(l) + " has " +
                                        std::to_string(s.c) + " channels, not divisible by " +
                                        std::to_string(blocks) + " for " + to_string(coupling) +
                                        " coupling");
        if (l + 1 < levels) {
            if (s.c % 2 != 0)
                throw std::invalid_argument("model: level " + std::to_string(l) +
                                            " cannot split an odd channel count");
            s.c /= 2;
        }
    }
}

FlowModel::FlowModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    Shape s = config_.input_shape();
    for (int l = 0; l < config_.levels; ++l) {
        Level level;
        level.input = s;
        if (config_.squeeze) s = {s.h / 2, s.w / 2, 4 * s.c};
        level.inner = s;
        for (int d = 0; d < config_.depth; ++d) {
            level.steps.push_back(std::make_unique<ActNorm>(s.c));
            if (config_.mixer == MixerKind::InvConv)
                level.steps.push_back(std::make_unique<InvConvLayer>(config_.kernel_size, s.c, rng));
            else
                level.steps.push_back(std::make_unique<Conv1x1>(s.c, rng));
            if (config_.coupling == CouplingKind::Quad)
                level.steps.push_back(
                    std::make_unique<QuadCoupling>(s.c, config_.hidden, config_.scale_bound, rng));
            else
                level.steps.push_back(
                    std::make_unique<AffineCoupling>(s.c, config_.hidden, config_.scale_bound, rng));
        }
        if (l + 1 < config_.levels) {
            level.split.emplace(s.c);
            s.c /= 2;
        }
        levels_.push_back(std::move(level));
    }
}

FlowModel::FlowModel(const FlowModel& other) : config_(other.config_) {
    for (const auto& lv : other.levels_) {
        Level copy;
        copy.input = lv.input;
        copy.inner = lv.inner;
        for (const auto& st : lv.steps) copy.steps.push_back(st->clone());
        copy.split = lv.split;
        levels_.push_back(std::move(copy));
    }
}

FlowModel& FlowModel::operator=(const FlowModel& other) {
    if (this != &other) *this = FlowModel(other);
    return *this;
}

std::vector<Shape> FlowModel::latent_shapes() const {
    std::vector<Shape> shapes;
    for (const auto& lv : levels_)
        if (lv.split) shapes.push_back({lv.inner.h, lv.inner.w, lv.inner.c / 2});
    const auto& last = levels_.back();
    shapes.push_back(last.inner);
    return shapes;
}

FlowModel::Encoding FlowModel::encode(const Tensor& x) const {
    if (x.rank() != 3 || x.shape() != config_.input_shape())
        throw std::invalid_argument("model: input shape " + x.shape().str() + " does not match " +
                                    config_.input_shape().str());
    Encoding enc;
    Tensor cur = x;
    for (const auto& lv : levels_) {
        if (config_.squeeze) cur = squeeze(cur);
        for (const auto& st : lv.steps) cur = st->forward(cur, enc.logdet);
        if (lv.split) {
            auto r = lv.split->forward(cur);
            enc.prior_logp += r.logp;
            enc.latents.push_back(std::move(r.z));
            cur = std::move(r.keep);
        }
    }
    enc.prior_logp += standard_normal_logp(cur);
    enc.latents.push_back(std::move(cur));
    enc.logp = enc.prior_logp + enc.logdet;
    return enc;
}

Tensor FlowModel::decode(const std::vector<Tensor>& latents) const {
    const auto shapes = latent_shapes();
    if (latents.size() != shapes.size())
        throw std::invalid_argument("model: expected " + std::to_string(shapes.size()) + " latents");
    for (std::size_t q = 0; q < shapes.size(); ++q)
        if (latents[q].shape() != shapes[q])
            throw std::invalid_argument("model: latent " + std::to_string(q) + " has shape " +
                                        latents[q].shape().str() + ", expected " + shapes[q].str());
    Tensor cur = latents.back();
    std::size_t next_split = latents.size() - 1;
    for (auto lv = levels_.rbegin(); lv != levels_.rend(); ++lv) {
        if (lv->split) cur = lv->split->inverse(cur, latents[--next_split]);
        for (auto st = lv->steps.rbegin(); st != lv->steps.rend(); ++st) cur = (*st)->inverse(cur);
        if (config_.squeeze) cur = unsqueeze(cur);
    }
    return cur;
}

Tensor FlowModel::sample(std::mt19937_64& rng, Real temperature) const {
    std::normal_distribution<Real> normal(0, 1);
    Tensor cur(levels_.back().inner);
    for (Real& v : cur.data()) v = temperature * normal(rng);
    for (auto lv = levels_.rbegin(); lv != levels_.rend(); ++lv) {
        if (lv->split) cur = lv->split->inverse(cur, lv->split->sample(cur, rng, temperature));
        for (auto st = lv->steps.rbegin(); st != lv->steps.rend(); ++st) cur = (*st)->inverse(cur);
        if (config_.squeeze) cur = unsqueeze(cur);
    }
    return cur;
}

Tensor FlowModel::sample_batch(int n, std::mt19937_64& rng, Real temperature) const {
    Tensor out(n, config_.input_shape());
    for (int q = 0; q < n; ++q) out.set_image(q, sample(rng, temperature));
    return out;
}

Real FlowModel::accumulate_gradient(const Tensor& x, std::span<Real> grad) const {
    if (grad.size() != parameter_count())
        throw std::invalid_argument("model: gradient buffer has the wrong length");
    if (x.rank() != 3 || x.shape() != config_.input_shape())
        throw std::invalid_argument("model: input shape mismatch");

    // Forward pass, keeping the input of every step and every split.
    std::vector<std::vector<Tensor>> inputs(levels_.size());
    std::vector<SplitPrior::Result> splits(levels_.size());
    Real logdet = 0;
    Real logp = 0;
    Tensor cur = x;
    for (std::size_t l = 0; l < levels_.size(); ++l) {
        const auto& lv = levels_[l];
        if (config_.squeeze) cur = squeeze(cur);
        for (const auto& st : lv.steps) {
            inputs[l].push_back(cur);
            cur = st->forward(cur, logdet);
        }
        if (lv.split) {
            splits[l] = lv.split->forward(cur);
            logp += splits[l].logp;
            cur = splits[l].keep;
        }
    }
    logp += standard_normal_logp(cur) + logdet;

    // Backward pass for J = -log p(x). d/dz of -log N(z; 0, I) is z.
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& lv : levels_) {
        offsets.push_back(off);
        for (const auto& st : lv.steps) off += st->parameter_count();
        if (lv.split) off += lv.split->parameter_count();
    }
    Tensor g = cur;
    for (std::size_t l = levels_.size(); l-- > 0;) {
        const auto& lv = levels_[l];
        std::size_t end = offsets[l];
        for (const auto& st : lv.steps) end += st->parameter_count();
        if (lv.split) {
            auto [gkeep, gz] = lv.split->backward(splits[l].keep, splits[l].z, -1,
                                                  grad.subspan(end, lv.split->parameter_count()));
            g = concat_channels({add(g, gkeep), gz});
        }
        for (std::size_t s = lv.steps.size(); s-- > 0;) {
            const auto& st = lv.steps[s];
            end -= st->parameter_count();
            g = st->backward(inputs[l][s], g, -1, grad.subspan(end, st->parameter_count()));
        }
        if (config_.squeeze) g = unsqueeze(g);
    }
    return -logp;
}

void FlowModel::data_init(const std::vector<Tensor>& batch) {
    if (batch.empty()) throw std::invalid_argument("model: data_init needs a non-empty batch");
    std::vector<Tensor> cur = batch;
    for (auto& lv : levels_) {
        if (config_.squeeze)
            for (auto& t : cur) t = squeeze(t);
        for (auto& st : lv.steps) {
            if (auto* an = dynamic_cast<ActNorm*>(st.get()); an && !an->initialized())
                an->initialize(cur);
            Real ignored = 0;
            for (auto& t : cur) t = st->forward(t, ignored);
        }
        if (lv.split)
            for (auto& t : cur) t = lv.split->forward(t).keep;
    }
}

void FlowModel::make_identity() {
    for (auto& lv : levels_) {
        for (auto& st : lv.steps) {
            auto params = st->parameters();
            std::fill(params.begin(), params.end(), Real(0));
            if (auto* c = dynamic_cast<Conv1x1*>(st.get()))
                for (int q = 0; q < c->channels(); ++q)
                    c->matrix()[static_cast<std::size_t>(q * c->channels() + q)] = 1;
            if (auto* an = dynamic_cast<ActNorm*>(st.get()))
                for (int c = 0; c < an->channels(); ++c) an->set_scale(c, 1);
            if (auto* ic = dynamic_cast<InvConvLayer*>(st.get())) {
                // clear sign flips too
                InvConvParams p = ic->params();
                std::fill(p.signs.begin(), p.signs.end(), Real(1));
                *ic = InvConvLayer(p);
            }
        }
        if (lv.split) std::fill(lv.split->parameters().begin(), lv.split->parameters().end(), Real(0));
    }
}

void FlowModel::initialize_identity_actnorm() {
    for (auto& lv : levels_)
        for (auto& st : lv.steps)
            if (auto* an = dynamic_cast<ActNorm*>(st.get())) an->mark_initialized();
}

bool FlowModel::initialized() const {
    for (const auto& lv : levels_)
        for (const auto& st : lv.steps)
            if (auto* an = dynamic_cast<const ActNorm*>(st.get()); an && !an->initialized()) return false;
    return true;
}

std::size_t FlowModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& lv : levels_) {
        for (const auto& st : lv.steps) n += st->parameter_count();
        if (lv.split) n += lv.split->parameter_count();
    }
    return n;
}

std::vector<Real> FlowModel::get_parameters() const {
    std::vector<Real> p;
    p.reserve(parameter_count());
    for (const auto& lv : levels_) {
        for (const auto& st : lv.steps) p.insert(p.end(), st->parameters().begin(), st->parameters().end());
        if (lv.split) p.insert(p.end(), lv.split->parameters().begin(), lv.split->parameters().end());
    }
    return p;
}

void FlowModel::set_parameters(std::span<const Real> params) {
    if (params.size() != parameter_count())
        throw std::invalid_argument("model: parameter vector has the wrong length");
    std::size_t off = 0;
    auto take = [&](std::span<Real> dst) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
        off += dst.size();
    };
    for (auto& lv : levels_) {
        for (auto& st : lv.steps) take(st->parameters());
        if (lv.split) take(lv.split->parameters());
    }
}

void FlowModel::randomize(std::mt19937_64& rng, Real scale) {
    for (auto& lv : levels_) {
        for (auto& st : lv.steps) st->randomize(rng, scale);
        if (lv.split) lv.split->randomize(rng, scale);
    }
}

Real FlowModel::min_invconv_diagonal() const {
    Real m = std::numeric_limits<Real>::infinity();
    for (const auto& lv : levels_)
        for (const auto& st : lv.steps)
            if (auto* ic = dynamic_cast<const InvConvLayer*>(st.get()))
                m = std::min(m, ic->min_diagonal_magnitude());
    return m;
}

Real bits_per_dim(Real logp, std::size_t dims) {
    const Real d = static_cast<Real>(dims);
    return (-logp + d * std::log(Real(256))) / (d * std::numbers::ln2_v<Real>);
}

}  // namespace invflow
