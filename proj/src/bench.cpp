#include "invflow/bench.hpp"

#include <Eigen/LU>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <ostream>
#include <random>

#include "invflow/invconv.hpp"
#include "invflow/layers.hpp"
#include "invflow/oracle.hpp"
#include "invflow/train.hpp"

namespace invflow {

std::uint64_t fnv1a(const Tensor& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (Real v : t.data()) {
        unsigned char b[sizeof(Real)];
        std::memcpy(b, &v, sizeof v);
        for (unsigned char c : b) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

const BenchRow* BenchReport::find(const std::string& method, const Shape& s) const {
    for (const auto& r : rows)
        if (r.method == method && r.shape == s) return &r;
    return nullptr;
}

double BenchReport::emerging_ratio(const Shape& s) const {
    const auto* e = find("emerging", s);
    const auto* o = find("ours-masked", s);
    if (!e || !o || o->mean_s <= 0) return std::nan("");
    return e->mean_s / o->mean_s;
}

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& t) {
    double mean = 0;
    for (double v : t) mean += v;
    mean /= static_cast<double>(t.size());
    double var = 0;
    for (double v : t) var += (v - mean) * (v - mean);
    const double sd = t.size() > 1 ? std::sqrt(var / static_cast<double>(t.size() - 1)) : 0;
    return {mean, sd};
}

// Keeps results observable so the optimizer cannot drop the work.
volatile double g_sink = 0;

}  // namespace

BenchReport run_bench(const BenchOptions& opt) {
    if (opt.repetitions < 1 || opt.batch < 1) throw std::invalid_argument("bench: bad repetitions or batch");
    BenchReport report;
    report.repetitions = opt.repetitions;
    report.batch = opt.batch;
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<Real> normal(0, 1);

    for (const Shape& s : opt.sizes) {
        Tensor inputs(opt.batch, s);
        for (Real& v : inputs.data()) v = normal(rng);
        report.input_hashes.push_back(fnv1a(inputs));
        std::vector<Tensor> images;
        for (int n = 0; n < opt.batch; ++n) images.push_back(inputs.image(n));

        const int k = opt.kernel_size;
        const ConvKernel masked = ConvKernel::random(k, s.c, KernelVariant::MaskedTriangular, rng);
        const ConvKernel block = ConvKernel::random(k, s.c, KernelVariant::BlockTriangular, rng);
        const EmergingConv emerging = EmergingConv::random(k, s.c, rng);
        const Conv1x1 one(s.c, rng);

        auto batch_run = [&](const std::function<Tensor(const Tensor&)>& inv) {
            return [&, inv] {
                std::vector<double> acc(images.size());
                parallel_for(images.size(), opt.threads,
                             [&](std::size_t i) { acc[i] = inv(images[i]).data()[0]; });
                for (double v : acc) g_sink = g_sink + v;
            };
        };

        // Every method is warmed up once, then the timed repetitions run
        // round-robin so slow drift in machine load hits all methods alike.
        std::vector<std::pair<std::string, std::function<void()>>> methods;
        methods.emplace_back("ours-masked", batch_run([&](const Tensor& y) { return conv_inverse(y, masked); }));
        methods.emplace_back("ours-block", batch_run([&](const Tensor& y) { return conv_inverse(y, block); }));
        methods.emplace_back("emerging", batch_run([&](const Tensor& y) { return emerging_inverse(y, emerging); }));
        methods.emplace_back("1x1", batch_run([&](const Tensor& y) { return one.inverse(y); }));

        const bool dense = s.size() <= kOracleMaxDim;
        DenseConvMatrix dm;
        if (dense) {
            dm = build_matrix(masked, s.h, s.w);
            methods.emplace_back("dense-solve", [&] {
                Eigen::PartialPivLU<DenseMatrix> lu(dm.m);
                std::vector<double> acc(images.size());
                parallel_for(images.size(), opt.threads, [&](std::size_t i) {
                    acc[i] = static_cast<double>(lu.solve(to_vector(images[i]))(0));
                });
                for (double v : acc) g_sink = g_sink + v;
            });
        }

        using clock = std::chrono::steady_clock;
        for (auto& m : methods) m.second();
        std::vector<std::vector<double>> times(methods.size());
        for (int r = 0; r < opt.repetitions; ++r)
            for (std::size_t m = 0; m < methods.size(); ++m) {
                const auto a = clock::now();
                methods[m].second();
                times[m].push_back(std::chrono::duration<double>(clock::now() - a).count());
            }
        for (std::size_t m = 0; m < methods.size(); ++m) {
            BenchRow row;
            row.method = methods[m].first;
            row.shape = s;
            std::tie(row.mean_s, row.std_s) = mean_sd(times[m]);
            report.rows.push_back(row);
        }
        if (!dense) {
            BenchRow row;
            row.method = "dense-solve";
            row.shape = s;
            row.skipped = true;
            report.rows.push_back(row);
        }

        const double ours = report.find("ours-masked", s)->mean_s;
        for (auto& r : report.rows)
            if (r.shape == s && !r.skipped) r.ratio_vs_ours = r.mean_s / ours;
    }
    return report;
}

void write_bench_csv(std::ostream& out, const BenchReport& report) {
    out << "method,H,W,C,mean_s,std_s,ratio_vs_ours\n";
    char buf[256];
    for (const auto& r : report.rows) {
        if (r.skipped) continue;
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%.6g,%.6g,%.4f\n", r.method.c_str(), r.shape.h,
                      r.shape.w, r.shape.c, r.mean_s, r.std_s, r.ratio_vs_ours);
        out << buf;
    }
}

void write_bench_table(std::ostream& out, const BenchReport& report) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "inversion of %d images, %d timed repetitions after 1 warm-up\n",
                  report.batch, report.repetitions);
    out << buf;
    std::snprintf(buf, sizeof buf, "%-12s %10s %12s %12s %8s\n", "method", "HxWxC", "mean [s]", "std [s]",
                  "ratio");
    out << buf;
    for (const auto& r : report.rows) {
        const std::string dims =
            std::to_string(r.shape.h) + "x" + std::to_string(r.shape.w) + "x" + std::to_string(r.shape.c);
        if (r.skipped)
            std::snprintf(buf, sizeof buf, "%-12s %10s %12s\n", r.method.c_str(), dims.c_str(),
                          "skipped (n > oracle guard)");
        else
            std::snprintf(buf, sizeof buf, "%-12s %10s %12.6f %12.6f %8.3f\n", r.method.c_str(),
                          dims.c_str(), r.mean_s, r.std_s, r.ratio_vs_ours);
        out << buf;
    }
}

}  // namespace invflow
