// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Reference values come from the oracles in tests/unit.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "invflow/bench.hpp"
#include "invflow/coupling.hpp"
#include "invflow/datasets.hpp"
#include "invflow/invconv.hpp"
#include "invflow/layers.hpp"
#include "invflow/model.hpp"
#include "invflow/oracle.hpp"
#include "invflow/train.hpp"
#include "oracles.hpp"

using namespace invflow;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// The diagonal tap of a C = 1 kernel under top-left padding.
Real k33(const ConvKernel& k) { return k(k.diag_row(), k.diag_col(), 0, 0); }

Outcome determinant_single_channel() {
    oracle::Gen g(1);
    int zeros = 0;
    Real worst = 0;
    for (int t = 0; t < 200; ++t) {
        const int H = g.integer(2, 5), W = g.integer(2, 5);
        ConvKernel K = ConvKernel::random(3, 1, KernelVariant::MaskedTriangular, g.rng, 0.5, 0.5);
        // every eighth kernel gets a zero diagonal tap
        if (t % 8 == 7) {
            K(K.diag_row(), K.diag_col(), 0, 0) = 0;
            ++zeros;
        }
        const Real det = dense_det(build_matrix(K, H, W).m);
        const Real expect = std::pow(k33(K), H * W);
        if (expect == 0) {
            if (std::abs(det) > 1e-9)
                return {false, fmt("kernel %g: det %g, expected 0", t, det)};
            continue;
        }
        const Real e = oracle::rel_err(det, expect);
        worst = std::max(worst, e);
        if (e > 1e-9)
            return {false, fmt("kernel %g: relative error %.3g", t, e)};
    }
    return {true, fmt("200 kernels, %g with zero tap, worst relative error %.2g", zeros, worst)};
}

Outcome triangular_structure() {
    oracle::Gen g(2);
    for (int t = 0; t < 100; ++t) {
        const int H = g.integer(2, 6), W = g.integer(2, 6);
        const ConvKernel K = ConvKernel::random(3, 1, KernelVariant::MaskedTriangular, g.rng);
        const DenseConvMatrix M = build_matrix(K, H, W);
        const TriangularReport r = check_triangular(M);
        if (!r.lower_triangular || !r.diagonal_constant_per_channel)
            return {false, "top-left kernel " + std::to_string(t) + ": " + r.summary()};
        if (M.m(0, 0) != k33(K)) return {false, "diagonal differs from the kernel tap"};
    }
    int broken = 0;
    for (int t = 0; t < 100; ++t) {
        const int H = g.integer(2, 6), W = g.integer(2, 6);
        const ConvKernel K = ConvKernel::random(3, 1, KernelVariant::MaskedTriangular, g.rng);
        if (!check_triangular(build_matrix(K, H, W, PadSpec::symmetric(3))).lower_triangular) ++broken;
    }
    if (broken == 0) return {false, "symmetric padding stayed triangular for all 100 kernels"};
    return {true, "100 top-left kernels triangular; symmetric padding breaks " +
                      std::to_string(broken) + "/100"};
}

Eigen::MatrixXd diag_block_matrix(const ConvKernel& K) {
    const int C = K.channels();
    Eigen::MatrixXd D(C, C);
    for (int ci = 0; ci < C; ++ci)
        for (int co = 0; co < C; ++co) D(ci, co) = K(K.diag_row(), K.diag_col(), ci, co);
    return D;
}

Outcome determinant_multi_channel() {
    oracle::Gen g(3);
    Real worst = 0;
    int cases = 0;
    for (int C : {2, 3})
        for (auto variant : {KernelVariant::MaskedTriangular, KernelVariant::BlockTriangular})
            for (int t = 0; t < 25; ++t) {
                const int H = g.integer(2, 4), W = g.integer(2, 4);
                const ConvKernel K = ConvKernel::random(3, C, variant, g.rng, 0.3, 0.5);
                const Eigen::MatrixXd D = diag_block_matrix(K);
                Real per_pixel = 1;
                if (variant == KernelVariant::MaskedTriangular)
                    for (int c = 0; c < C; ++c) per_pixel *= D(c, c);
                else
                    per_pixel = oracle::det_by_elimination(D);
                const Real expect = std::pow(per_pixel, H * W);
                const Real det = dense_det(build_matrix(K, H, W).m);
                const Real e = oracle::rel_err(det, expect);
                worst = std::max(worst, e);
                ++cases;
                if (e > 1e-9)
                    return {false, to_string(variant) + " C=" + std::to_string(C) +
                                       fmt(": relative error %.3g", e)};
            }
    return {true, std::to_string(cases) + fmt(" kernels, worst relative error %.2g", worst)};
}

Outcome round_trip() {
    oracle::Gen g(4);
    Real worst = 0;
    for (int t = 0; t < 100; ++t) {
        const int H = g.integer(1, 16), W = g.integer(1, 16), C = g.integer(1, 4);
        const auto variant = g.coin() ? KernelVariant::MaskedTriangular : KernelVariant::BlockTriangular;
        // off-diagonal taps at the layer's initialization scale; with much
        // larger taps against a 0.1 diagonal the matrix itself is
        // ill-conditioned and a dense LU solve fails as well
        const ConvKernel K = ConvKernel::random(3, C, variant, g.rng, 0.05, 0.1);
        const Tensor x = g.image({H, W, C});
        const Real e = max_abs_diff(conv_inverse(conv_forward(x, K), K), x);
        worst = std::max(worst, e);
    }
    return {worst < 1e-8, fmt("100 cases up to 16x16x4, max abs error %.3g", worst)};
}

// log|det| reported by f against the finite-difference Jacobian of f.
bool logdet_agrees(const std::function<Tensor(const Tensor&, Real&)>& f, const Tensor& x, Real& worst) {
    const auto J = oracle::fd_jacobian([&](const Tensor& t) {
        Real ld = 0;
        return f(t, ld);
    }, x);
    const Real fd = oracle::log_abs_det(J);
    Real ld = 0;
    f(x, ld);
    const Real e = std::abs(ld - fd) / std::max<Real>(std::abs(fd), 1);
    worst = std::max(worst, e);
    return e <= 1e-4;
}

Outcome layer_logdets() {
    Real worst = 0;
    auto layer = [&](const FlowLayer& l, const Tensor& x) {
        if (x.size() > 32) throw std::logic_error("test input too large");
        return logdet_agrees([&](const Tensor& t, Real& ld) { return l.forward(t, ld); }, x, worst);
    };
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        oracle::Gen g(50 + seed);
        ActNorm a(2);
        a.randomize(g.rng, 0.5);
        a.mark_initialized();
        if (!layer(a, g.image({2, 3, 2}))) return {false, "actnorm"};

        Conv1x1 c(3, g.rng);
        c.randomize(g.rng, 0.3);
        if (!layer(c, g.image({2, 2, 3}))) return {false, "conv1x1"};

        AffineCoupling ac(4, 6, 2, g.rng);
        ac.randomize(g.rng, 0.3);
        if (!layer(ac, g.image({2, 2, 4}))) return {false, "affine coupling"};

        QuadCoupling qc(8, 6, 2, g.rng);
        qc.randomize(g.rng, 0.3);
        if (!layer(qc, g.image({2, 2, 8}))) return {false, "quad coupling"};

        InvConvLayer ic(3, 2, g.rng);
        ic.randomize(g.rng, 0.3);
        if (!layer(ic, g.image({3, 4, 2}))) return {false, "invertible convolution"};

        Squeeze sq;
        if (!layer(sq, g.image({2, 4, 2}))) return {false, "squeeze"};

        // split: x -> (keep, standardized z), log-Jacobian -sum(log sigma)
        SplitPrior sp(4);
        sp.randomize(g.rng, 0.3);
        const bool ok = logdet_agrees([&](const Tensor& t, Real& ld) {
            const auto r = sp.forward(t);
            ld += -sp.sum_log_sigma(r.keep);
            return concat_channels({r.keep, sp.standardize(r.keep, r.z)});
        }, g.image({2, 4, 4}), worst);
        if (!ok) return {false, "split"};
    }
    return {true, fmt("7 layer kinds x 5 seeds, worst relative error %.2g", worst)};
}

Outcome model_gradient() {
    ModelConfig c;
    c.height = c.width = 4;
    c.channels = 4;
    c.levels = 2;
    c.depth = 2;
    c.hidden = 4;
    Real worst = 0;
    std::size_t checked = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        FlowModel m(c, seed);
        m.initialize_identity_actnorm();
        // larger perturbations blow the 16-channel activations up to a loss
        // near 1e7, where central differences carry no digits
        std::mt19937_64 rng(seed + 100);
        m.randomize(rng, 0.05);
        oracle::Gen g(seed);
        const Tensor x = g.image_in(c.input_shape(), 0, 1);
        std::vector<Real> grad(m.parameter_count(), 0);
        m.accumulate_gradient(x, grad);
        auto p = m.get_parameters();
        const Real h = 1e-5;
        for (std::size_t q = 0; q < p.size(); ++q) {
            const Real keep = p[q];
            p[q] = keep + h;
            m.set_parameters(p);
            const Real fp = -m.log_prob(x);
            p[q] = keep - h;
            m.set_parameters(p);
            const Real fm = -m.log_prob(x);
            p[q] = keep;
            const Real num = (fp - fm) / (2 * h);
            const Real e = std::abs(grad[q] - num) / std::max({std::abs(grad[q]), std::abs(num), 1e-3});
            worst = std::max(worst, e);
            if (e >= 1e-4)
                return {false, fmt("seed %g parameter %g", static_cast<double>(seed), static_cast<double>(q)) +
                                   fmt(": analytic %.8g numeric %.8g", grad[q], num)};
        }
        m.set_parameters(p);
        checked += p.size();
    }
    return {true, std::to_string(checked) + fmt(" parameters, worst relative error %.2g", worst)};
}

Outcome quadrature() {
    ModelConfig c;
    c.height = c.width = 1;
    c.channels = 2;
    c.levels = 1;
    c.depth = 2;
    c.hidden = 4;
    c.coupling = CouplingKind::Affine;
    c.squeeze = false;
    Real worst = 0;
    for (std::uint64_t seed : {3, 9, 21}) {
        FlowModel m(c, seed);
        m.initialize_identity_actnorm();
        std::mt19937_64 rng(seed + 1000);
        m.randomize(rng, 0.3);
        const int n = 401;
        const Real lo = -10, hi = 10, h = (hi - lo) / (n - 1);
        Real total = 0;
        Tensor x(c.input_shape());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                x.data()[0] = lo + i * h;
                x.data()[1] = lo + j * h;
                const Real w = (i == 0 || i == n - 1 ? 0.5 : 1) * (j == 0 || j == n - 1 ? 0.5 : 1);
                total += w * std::exp(m.log_prob(x));
            }
        worst = std::max(worst, std::abs(total * h * h - 1));
    }
    return {worst <= 1e-3, fmt("one pixel, two channels, 3 models: max |integral - 1| = %.2g", worst)};
}

Outcome identity_uniform_bpd() {
    DatasetSpec s;
    s.kind = DatasetKind::Uniform;
    s.height = s.width = 8;
    s.size = 512;
    const auto data = make_dataset(s);
    ModelConfig c;
    c.height = c.width = 8;
    c.hidden = 8;
    FlowModel m(c, 1);
    TrainOptions o;
    o.epochs = 0;
    o.identity_init = true;
    o.actnorm_init = ActNormInit::Identity;
    const auto r = train(m, data, o);
    return {std::abs(r.initial.bpd - 8.0) <= 0.01, fmt("bpd %.4f (target 8.00 +- 0.01)", r.initial.bpd)};
}

ModelConfig desk_model() {
    ModelConfig c;
    c.height = c.width = 8;
    c.channels = 1;
    c.levels = 2;
    c.depth = 2;
    c.hidden = 16;
    return c;
}

TrainOptions desk_options() {
    TrainOptions o;
    o.epochs = 50;
    o.batch_size = 32;
    o.seed = 0;
    return o;
}

Outcome training() {
    DatasetSpec cb;
    cb.kind = DatasetKind::Checkerboard;
    cb.size = 256;
    FlowModel m1(desk_model(), 0);
    const auto r1 = train(m1, make_dataset(cb), desk_options());
    if (r1.diverged) return {false, "checkerboard run diverged: " + r1.message};
    const Real drop = r1.initial.bpd - r1.epochs.back().bpd;

    // iid pixels need no spatial model; a smaller flow and more images keep
    // it from memorizing the training draw. Scored on the training set and
    // on a fresh draw.
    ModelConfig small = desk_model();
    small.depth = 1;
    small.hidden = 8;
    DatasetSpec gs;
    gs.kind = DatasetKind::GaussianIid;
    gs.size = 2048;
    gs.seed = 1;
    FlowModel m2(small, 0);
    const auto r2 = train(m2, make_dataset(gs), desk_options());
    if (r2.diverged) return {false, "gaussian run diverged: " + r2.message};
    DatasetSpec held = gs;
    held.seed = 2;
    held.size = 1024;
    const Real final_bpd = r2.epochs.back().bpd;
    const Real held_bpd = evaluate(m2, make_dataset(held), 777).bpd;
    const Real entropy = discrete_gaussian_entropy_bits(gs.gaussian_mean, gs.gaussian_std);

    const bool ok = drop >= 0.5 && std::abs(final_bpd - entropy) <= 0.1 &&
                    std::abs(held_bpd - entropy) <= 0.1;
    return {ok, fmt("checkerboard bpd %.3f -> ", r1.initial.bpd) +
                    fmt("%.3f (drop %.3f, need >= 0.5); ", r1.epochs.back().bpd, drop) +
                    fmt("gaussian final bpd %.4f, held-out %.4f, ", final_bpd, held_bpd) +
                    fmt("entropy %.4f", entropy)};
}

Outcome bench_ratio() {
    BenchOptions o;
    o.sizes = {{32, 32, 12}, {16, 16, 4}};
    o.repetitions = 20;
    o.threads = 1;
    const BenchReport r = run_bench(o);
    const double a = r.emerging_ratio({32, 32, 12});
    const double b = r.emerging_ratio({16, 16, 4});
    const bool ok = a >= 1.5 && a <= 2.5 && b >= 1.5 && b <= 2.5;
    return {ok, fmt("emerging/ours at 32x32x12 = %.3f, at 16x16x4 = %.3f", a, b) + " (20 repetitions)"};
}

struct Criterion {
    int id;
    const char* name;
    double time_limit_s;  // 0 for none
    Outcome (*run)();
};

}  // namespace

int main() {
    const Criterion criteria[] = {
        {1, "single-channel determinant", 10, determinant_single_channel},
        {2, "triangular structure", 5, triangular_structure},
        {3, "multi-channel determinant", 0, determinant_multi_channel},
        {4, "inversion round trip", 0, round_trip},
        {5, "layer log-determinants", 0, layer_logdets},
        {6, "model gradient", 120, model_gradient},
        {7, "density integrates to one", 0, quadrature},
        {7, "identity model on uniform noise", 0, identity_uniform_bpd},
        {8, "training at desk scale", 900, training},
        {9, "emerging vs ours inversion time", 0, bench_ratio},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = seconds_since(t0);
        if (c.time_limit_s > 0 && s >= c.time_limit_s) {
            o.pass = false;
            o.detail += fmt("; over the %.0f s limit", c.time_limit_s);
        }
        if (!o.pass) ++failures;
        std::printf("%s  %d  %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), s);
        std::fflush(stdout);
    }
    std::printf("EXCLUDED  10  full-scale image benchmark bpd (not reproducible at desk scale)\n");
    std::printf("%d failed\n", failures);
    return failures == 0 ? 0 : 1;
}
