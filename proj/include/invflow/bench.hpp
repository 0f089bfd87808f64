#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "invflow/tensor.hpp"

namespace invflow {

struct BenchOptions {
    std::vector<Shape> sizes = {{16, 16, 4}, {32, 32, 12}};
    int repetitions = 5;  // timed runs per method and size, after one warm-up run each
    int batch = 100;      // images inverted per run
    int kernel_size = 3;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct BenchRow {
    std::string method;
    Shape shape;
    bool skipped = false;  // dense-solve above the oracle size guard
    double mean_s = 0;
    double std_s = 0;
    double ratio_vs_ours = 0;  // mean_s / mean_s of ours-masked at the same size
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::vector<std::uint64_t> input_hashes;  // one per size, FNV-1a over the input batch
    int repetitions = 0;
    int batch = 0;

    const BenchRow* find(const std::string& method, const Shape& s) const;
    /// mean(emerging) / mean(ours-masked) at the given size.
    double emerging_ratio(const Shape& s) const;
};

/// Times the inversion of one batch of identical random inputs with every
/// method: ours-masked, ours-block, emerging, 1x1, dense-solve. Only the
/// inversion is timed; kernels, inputs and the dense matrix are prepared
/// beforehand. dense-solve factorizes once per batch.
BenchReport run_bench(const BenchOptions& options);

/// "method,H,W,C,mean_s,std_s,ratio_vs_ours" followed by one row per timed
/// method and size.
void write_bench_csv(std::ostream& out, const BenchReport& report);
void write_bench_table(std::ostream& out, const BenchReport& report);

/// 64-bit FNV-1a over the raw bytes of the tensor's values.
std::uint64_t fnv1a(const Tensor& t);

}  // namespace invflow
