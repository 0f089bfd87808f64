#include "invflow/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "invflow/bench.hpp"
#include "invflow/checkpoint.hpp"
#include "invflow/config.hpp"
#include "invflow/oracle.hpp"
#include "invflow/tensor_io.hpp"

namespace invflow {

namespace fs = std::filesystem;

void save_kernel_fixture(const fs::path& path, const ConvKernel& k) {
    const int c = k.channels();
    Tensor t(Shape{k.size(), k.size(), c * c});
    for (int a = 0; a < k.size(); ++a)
        for (int b = 0; b < k.size(); ++b)
            for (int ci = 0; ci < c; ++ci)
                for (int co = 0; co < c; ++co) t(a, b, ci * c + co) = k(a, b, ci, co);
    save_tensor(path, t);
    std::ofstream side(path.string() + ".json");
    if (!side) throw std::runtime_error("cannot write " + path.string() + ".json");
    side << nlohmann::json{{"variant", k.variant() == KernelVariant::MaskedTriangular ? "masked" : "block"},
                           {"k", k.size()},
                           {"C", c}}
                .dump(2)
         << "\n";
}

ConvKernel load_kernel_fixture(const fs::path& path) {
    const Tensor t = load_tensor(path);
    const fs::path side_path = path.string() + ".json";
    std::ifstream side(side_path);
    if (!side) throw FormatError("kernel fixture: missing sidecar " + side_path.string());
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("kernel fixture: malformed sidecar: " + std::string(e.what()));
    }
    KernelVariant variant;
    try {
        variant = parse_variant(meta.value("variant", std::string("masked")));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("kernel fixture: ") + e.what());
    }
    const int k = t.height();
    const int c = static_cast<int>(std::lround(std::sqrt(static_cast<double>(t.channels()))));
    if (t.rank() != 3 || t.width() != k || c * c != t.channels() || k % 2 == 0)
        throw FormatError("kernel fixture: expected an odd k x k x C*C tensor, got " + t.shape().str());
    if ((meta.contains("k") && meta["k"].get<int>() != k) || (meta.contains("C") && meta["C"].get<int>() != c))
        throw FormatError("kernel fixture: sidecar disagrees with the tensor shape " + t.shape().str());
    ConvKernel kernel(k, c, variant);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b)
            for (int ci = 0; ci < c; ++ci)
                for (int co = 0; co < c; ++co) kernel(a, b, ci, co) = t(a, b, ci * c + co);
    return kernel;
}

namespace {

struct Common {
    std::string config;
    std::string checkpoint;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    bool threads_set = false;
    double temperature = 1.0;
};

std::vector<Shape> parse_sizes(const std::string& text) {
    std::vector<Shape> sizes;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        Shape s{};
        char x1 = 0, x2 = 0;
        std::istringstream is(item);
        if (!(is >> s.h >> x1 >> s.w >> x2 >> s.c) || x1 != 'x' || x2 != 'x' || s.h < 1 || s.w < 1 || s.c < 1)
            throw ConfigError("bad size '" + item + "' (expected HxWxC)");
        sizes.push_back(s);
    }
    if (sizes.empty()) throw ConfigError("no sizes given");
    return sizes;
}

int cmd_train(const Common& o, std::ostream& out, std::ostream& err) {
    RunConfig cfg = load_config(o.config);
    if (o.seed_set) cfg.train.seed = o.seed;
    if (o.threads_set) cfg.train.threads = o.threads;
    if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
    if (!o.out.empty()) cfg.metrics = o.out;
    const auto data = make_dataset(cfg.data);
    FlowModel model(cfg.model, cfg.train.seed);

    std::ofstream csv(cfg.metrics, std::ios::binary);
    if (!csv) throw ConfigError("cannot write metrics file " + cfg.metrics.string());
    csv << metrics_csv_header() << "\n";
    out << "model: " << model.parameter_count() << " parameters, " << data.size() << " images\n";
    auto report = [&](const EpochMetrics& m) {
        if (m.epoch > 0) {
            csv << metrics_csv_row(m) << "\n";
            csv.flush();
        }
        out << "epoch " << m.epoch << (m.epoch == 0 ? " (before training)" : "") << ": nll " << std::fixed << std::setprecision(4) << m.nll << " bpd "
            << m.bpd << "\n"
            << std::defaultfloat;
    };
    const TrainResult res = train(model, data, cfg.train, report);
    save_checkpoint(cfg.checkpoint, model);
    out << "checkpoint written to " << cfg.checkpoint.string() << "\n";
    if (res.diverged) {
        err << "training diverged: " << res.message << "; last good parameters saved\n";
        return kExitDiverged;
    }
    return kExitOk;
}

int cmd_sample(const Common& o, int n, std::ostream& out) {
    if (o.checkpoint.empty()) throw ConfigError("sample needs --checkpoint");
    if (n < 1) throw ConfigError("--n must be positive");
    const FlowModel model = load_checkpoint(o.checkpoint);
    std::mt19937_64 rng(o.seed);
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor batch = model.sample_batch(n, rng, o.temperature);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "sampled " << n << " images in " << secs << " s\n";

    const fs::path dir = o.out.empty() ? fs::path("samples") : fs::path(o.out);
    fs::create_directories(dir);
    const int c = model.config().channels;
    if (c == 1 || c == 3) {
        for (int q = 0; q < n; ++q) {
            Tensor img = batch.image(q);
            for (Real& v : img.data()) v = std::clamp(std::round(256 * v), Real(0), Real(255));
            char name[32];
            std::snprintf(name, sizeof name, "sample_%04d.%s", q, c == 1 ? "pgm" : "ppm");
            write_pnm(dir / name, img);
        }
    } else {
        save_tensor(dir / "samples.ivt", batch);
    }
    out << "wrote " << n << " samples to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_eval(const Common& o, std::ostream& out) {
    if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    if (o.config.empty()) throw ConfigError("eval needs --config for the dataset");
    const RunConfig cfg = load_config(o.config);
    const FlowModel model = load_checkpoint(o.checkpoint);
    if (model.config().input_shape() != cfg.model.input_shape())
        throw ConfigError("checkpoint input shape " + model.config().input_shape().str() +
                          " does not match dataset shape " + cfg.model.input_shape().str());
    const auto data = make_dataset(cfg.data);
    const std::uint64_t seed = o.seed_set ? o.seed : cfg.train.eval_seed;
    const auto ev = evaluate(model, data, seed, o.threads_set ? o.threads : cfg.train.threads);
    out << std::setprecision(12) << "nll " << ev.nll << "\nbpd " << ev.bpd << "\n";
    return kExitOk;
}

int cmd_check(const std::string& kernel_path, int h, int w, const std::string& dump, std::ostream& out) {
    const ConvKernel k = load_kernel_fixture(kernel_path);
    const int c = k.channels();
    out << "variant: " << to_string(k.variant()) << ", k=" << k.size() << ", C=" << c << "\n";
    const auto d = k.diagonal_block();
    out << "diagonal tap D (row ci, column co):\n";
    for (int ci = 0; ci < c; ++ci) {
        out << " ";
        for (int co = 0; co < c; ++co) out << " " << std::setw(12) << d[static_cast<std::size_t>(ci * c + co)];
        out << "\n";
    }
    out << "mask: " << (k.satisfies_mask() ? "ok" : "violated") << "\n";
    const auto verdict = is_invertible(k);
    if (verdict)
        out << "invertible; logdet/pixel = " << conv_logdet(k, 1, 1) << "\n";
    else
        out << "singular: " << verdict.reason << "\n";

    const std::size_t n = static_cast<std::size_t>(h) * w * c;
    if (n <= kOracleMaxDim) {
        const auto dm = build_matrix(k, h, w);
        const auto tri = check_triangular(dm);
        if (!dump.empty()) {
            save_tensor(dump, matrix_to_tensor(dm.m));
            out << "matrix written to " << dump << "\n";
        }
        out << "oracle " << h << "x" << w << " (n=" << n << "): " << tri.summary() << "\n";
        Real det = dense_det(dm.m);
        if (det == 0) det = 0;  // no "-0" in the report
        out << "oracle det = " << det;
        if (verdict) {
            const Real ld = dense_log_abs_det(dm.m);
            out << ", log|det| = " << ld << ", closed form = " << conv_logdet(k, h, w);
        }
        out << "\n";
    } else {
        out << "oracle skipped: n=" << n << " exceeds " << kOracleMaxDim << "\n";
    }
    return verdict ? kExitOk : kExitSingular;
}

int cmd_make_kernel(const std::string& kind, const std::string& path, int kk, int c, std::uint64_t seed,
                    std::ostream& out) {
    std::mt19937_64 rng(seed);
    ConvKernel k;
    if (kind == "identity") {
        k = ConvKernel::identity(kk, c, KernelVariant::MaskedTriangular);
    } else if (kind == "random") {
        k = ConvKernel::random(kk, c, KernelVariant::MaskedTriangular, rng);
    } else if (kind == "random-block") {
        k = ConvKernel::random(kk, c, KernelVariant::BlockTriangular, rng);
    } else if (kind == "zero-diag") {
        k = ConvKernel::random(kk, c, KernelVariant::MaskedTriangular, rng);
        k(k.diag_row(), k.diag_col(), 0, 0) = 0;
    } else if (kind == "singular-block") {
        k = ConvKernel::random(kk, c, KernelVariant::BlockTriangular, rng);
        if (c < 2) throw ConfigError("singular-block needs C >= 2");
        // Second row of D copies the first.
        for (int co = 0; co < c; ++co) k(k.diag_row(), k.diag_col(), 1, co) = k(k.diag_row(), k.diag_col(), 0, co);
    } else {
        throw ConfigError("unknown kernel kind '" + kind +
                          "' (identity, random, random-block, zero-diag, singular-block)");
    }
    save_kernel_fixture(path, k);
    out << "wrote " << kind << " kernel to " << path << "\n";
    return kExitOk;
}

int cmd_bench(const Common& o, const std::string& sizes, int reps, int batch, std::ostream& out) {
    BenchOptions opt;
    opt.sizes = parse_sizes(sizes);
    opt.repetitions = reps;
    opt.batch = batch;
    opt.seed = o.seed;
    opt.threads = o.threads;
    if (reps < 5) throw ConfigError("--repetitions must be at least 5");
    const auto report = run_bench(opt);
    write_bench_table(out, report);
    for (std::size_t q = 0; q < opt.sizes.size(); ++q) {
        char hash[32];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(report.input_hashes[q]));
        out << "input hash " << opt.sizes[q].h << "x" << opt.sizes[q].w << "x" << opt.sizes[q].c << ": " << hash
            << "\n";
    }
    if (!o.out.empty()) {
        std::ofstream csv(o.out);
        if (!csv) throw ConfigError("cannot write " + o.out);
        write_bench_csv(csv, report);
        out << "csv written to " << o.out << "\n";
    } else {
        write_bench_csv(out, report);
    }
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"invflow: normalizing flows with single-pass invertible convolutions"};
    app.require_subcommand(1);
    Common o;
    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", o.seed, "random seed")->each([&](const std::string&) { o.seed_set = true; });
    };
    auto add_threads = [&](CLI::App* sub) {
        sub->add_option("--threads", o.threads, "worker threads")
            ->check(CLI::PositiveNumber)
            ->each([&](const std::string&) { o.threads_set = true; });
    };

    bool print_config = false;
    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    auto* print_flag = train_cmd->add_flag("--print-config", print_config, "print every config key with its default and exit");
    train_cmd->add_option("--config", o.config, "config file")->excludes(print_flag);
    train_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint output (overrides config)");
    train_cmd->add_option("--out", o.out, "metrics CSV output (overrides config)");
    add_seed(train_cmd);
    add_threads(train_cmd);

    int n = 16;
    auto* sample_cmd = app.add_subcommand("sample", "draw images from a checkpoint");
    sample_cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
    sample_cmd->add_option("--n", n, "number of images");
    sample_cmd->add_option("--temperature", o.temperature, "latent temperature");
    sample_cmd->add_option("--out", o.out, "output directory");
    add_seed(sample_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "bits per dimension of a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--config", o.config, "config file describing the dataset")->required();
    add_seed(eval_cmd);
    add_threads(eval_cmd);

    std::string kernel_path, make_kind, dump_path;
    int check_h = 4, check_w = 4, make_k = 3, make_c = 1;
    auto* check_cmd = app.add_subcommand("check", "verify invertibility of a kernel fixture");
    check_cmd->add_option("kernel", kernel_path, "kernel fixture (raw tensor + .json sidecar)")->required();
    check_cmd->add_option("--height", check_h, "image height for the oracle cross-check");
    check_cmd->add_option("--width", check_w, "image width for the oracle cross-check");
    check_cmd->add_option("--dump-matrix", dump_path, "write the oracle matrix as a raw tensor");
    check_cmd->add_option("--make", make_kind,
                          "write a fixture instead: identity, random, random-block, zero-diag, singular-block");
    check_cmd->add_option("--k", make_k, "kernel size for --make");
    check_cmd->add_option("--channels", make_c, "channels for --make");
    add_seed(check_cmd);

    std::string sizes = "16x16x4,32x32x12";
    int reps = 5, batch = 100;
    auto* bench_cmd = app.add_subcommand("bench", "time inversion strategies");
    bench_cmd->add_option("--sizes", sizes, "comma-separated HxWxC list");
    bench_cmd->add_option("--repetitions", reps, "timed repetitions (>= 5)");
    bench_cmd->add_option("--batch", batch, "images per run");
    bench_cmd->add_option("--out", o.out, "CSV output path (default: standard output)");
    add_seed(bench_cmd);
    add_threads(bench_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train_cmd) {
            if (print_config) {
                out << default_config_text();
                return kExitOk;
            }
            if (o.config.empty()) throw ConfigError("train needs --config");
            return cmd_train(o, out, err);
        }
        if (*sample_cmd) return cmd_sample(o, n, out);
        if (*eval_cmd) return cmd_eval(o, out);
        if (*check_cmd) {
            if (!make_kind.empty()) return cmd_make_kernel(make_kind, kernel_path, make_k, make_c, o.seed, out);
            return cmd_check(kernel_path, check_h, check_w, dump_path, out);
        }
        if (*bench_cmd) return cmd_bench(o, sizes, reps, batch, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}

}  // namespace invflow
