// Python bindings. Images cross the boundary as float64 numpy arrays of
// shape (H, W, C); kernels as (k, k, C, C) indexed [a, b, ci, co].

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "invflow/bench.hpp"
#include "invflow/checkpoint.hpp"
#include "invflow/cli.hpp"
#include "invflow/datasets.hpp"
#include "invflow/invconv.hpp"
#include "invflow/model.hpp"
#include "invflow/oracle.hpp"
#include "invflow/train.hpp"

namespace py = pybind11;
using namespace invflow;

namespace {

using Array = py::array_t<Real, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 3) throw std::invalid_argument("expected an array of shape (H, W, C)");
    const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
    return Tensor(s, std::vector<Real>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> dims;
    if (t.rank() == 4) dims.push_back(t.batch());
    dims.insert(dims.end(), {t.height(), t.width(), t.channels()});
    Array out(dims);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Array matrix_array(const DenseMatrix& m) {
    Array out({m.rows(), m.cols()});
    auto v = out.mutable_unchecked<2>();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) v(r, c) = m(r, c);
    return out;
}

ConvKernel kernel_from_array(const Array& w, const std::string& variant) {
    if (w.ndim() != 4 || w.shape(0) != w.shape(1) || w.shape(2) != w.shape(3))
        throw std::invalid_argument("kernel must have shape (k, k, C, C)");
    ConvKernel K(static_cast<int>(w.shape(0)), static_cast<int>(w.shape(2)), parse_variant(variant));
    std::copy(w.data(), w.data() + w.size(), K.weights().begin());
    return K;
}

Array kernel_array(const ConvKernel& K) {
    const py::ssize_t k = K.size(), c = K.channels();
    Array out({k, k, c, c});
    std::copy(K.weights().begin(), K.weights().end(), out.mutable_data());
    return out;
}

std::vector<Tensor> images_from(const py::object& obj) {
    std::vector<Tensor> out;
    const Array a = obj.cast<Array>();
    if (a.ndim() == 3) {
        out.push_back(to_tensor(a));
        return out;
    }
    if (a.ndim() != 4) throw std::invalid_argument("expected images of shape (N, H, W, C)");
    const Shape s{static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))};
    const std::size_t n = s.size();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        out.emplace_back(s, std::vector<Real>(a.data() + i * n, a.data() + (i + 1) * n));
    return out;
}

}  // namespace

PYBIND11_MODULE(_invflow, m) {
    m.doc() = "Single-pass invertible convolutions and the flow models built from them.";

    py::register_exception<SingularKernelError>(m, "SingularKernelError", PyExc_ValueError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

    // kernels
    py::class_<ConvKernel>(m, "ConvKernel")
        .def(py::init(&kernel_from_array), py::arg("weights"), py::arg("variant") = "masked")
        .def_static(
            "random",
            [](int k, int channels, const std::string& variant, std::uint64_t seed, Real sigma, Real min_diag) {
                std::mt19937_64 rng(seed);
                return ConvKernel::random(k, channels, parse_variant(variant), rng, sigma, min_diag);
            },
            py::arg("k"), py::arg("channels"), py::arg("variant") = "masked", py::arg("seed") = 0,
            py::arg("sigma") = 0.3, py::arg("min_diag") = 0.5)
        .def_static(
            "identity",
            [](int k, int channels, const std::string& variant) {
                return ConvKernel::identity(k, channels, parse_variant(variant));
            },
            py::arg("k"), py::arg("channels"), py::arg("variant") = "masked")
        .def_property_readonly("size", &ConvKernel::size)
        .def_property_readonly("channels", &ConvKernel::channels)
        .def_property_readonly("variant", [](const ConvKernel& k) { return to_string(k.variant()); })
        .def_property_readonly("weights", &kernel_array)
        .def("satisfies_mask", &ConvKernel::satisfies_mask)
        .def("__repr__", [](const ConvKernel& k) {
            return "ConvKernel(k=" + std::to_string(k.size()) + ", C=" + std::to_string(k.channels()) +
                   ", " + to_string(k.variant()) + ")";
        });

    m.def("conv_forward", [](const Array& x, const ConvKernel& k) { return to_array(conv_forward(to_tensor(x), k)); },
          py::arg("x"), py::arg("kernel"));
    m.def("conv_inverse",
          [](const Array& y, const ConvKernel& k, Real tol) { return to_array(conv_inverse(to_tensor(y), k, tol)); },
          py::arg("y"), py::arg("kernel"), py::arg("tol") = 1e-8);
    m.def("conv_logdet", [](const ConvKernel& k, int h, int w) { return conv_logdet(k, h, w); }, py::arg("kernel"),
          py::arg("height"), py::arg("width"));
    m.def(
        "is_invertible",
        [](const ConvKernel& k, Real tol) {
            const auto v = is_invertible(k, tol);
            return py::make_tuple(static_cast<bool>(v), v.reason);
        },
        py::arg("kernel"), py::arg("tol") = 1e-8);
    m.def("free_weight_count", &free_weight_count, py::arg("k"), py::arg("channels"));

    // dense oracle
    m.def(
        "build_matrix", [](const ConvKernel& k, int h, int w) { return matrix_array(build_matrix(k, h, w).m); },
        py::arg("kernel"), py::arg("height"), py::arg("width"));
    m.def(
        "dense_det", [](const ConvKernel& k, int h, int w) { return dense_det(build_matrix(k, h, w).m); },
        py::arg("kernel"), py::arg("height"), py::arg("width"));
    m.def(
        "check_triangular",
        [](const ConvKernel& k, int h, int w) {
            const auto r = check_triangular(build_matrix(k, h, w));
            py::dict d;
            d["lower_triangular"] = r.lower_triangular;
            d["block_lower_triangular"] = r.block_lower_triangular;
            d["diagonal_constant_per_channel"] = r.diagonal_constant_per_channel;
            d["passes"] = r.passes(k.variant());
            d["summary"] = r.summary();
            return d;
        },
        py::arg("kernel"), py::arg("height"), py::arg("width"));

    // model
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("height", &ModelConfig::height)
        .def_readwrite("width", &ModelConfig::width)
        .def_readwrite("channels", &ModelConfig::channels)
        .def_readwrite("levels", &ModelConfig::levels)
        .def_readwrite("depth", &ModelConfig::depth)
        .def_readwrite("hidden", &ModelConfig::hidden)
        .def_readwrite("kernel_size", &ModelConfig::kernel_size)
        .def_readwrite("scale_bound", &ModelConfig::scale_bound)
        .def_readwrite("squeeze", &ModelConfig::squeeze)
        .def_property(
            "coupling", [](const ModelConfig& c) { return to_string(c.coupling); },
            [](ModelConfig& c, const std::string& s) { c.coupling = parse_coupling(s); })
        .def_property(
            "mixer", [](const ModelConfig& c) { return to_string(c.mixer); },
            [](ModelConfig& c, const std::string& s) { c.mixer = parse_mixer(s); })
        .def("validate", &ModelConfig::validate);

    py::class_<FlowModel>(m, "FlowModel")
        .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
        .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
        .def("save", [](const FlowModel& f, const std::filesystem::path& p) { save_checkpoint(p, f); },
             py::arg("path"))
        .def_property_readonly("config", &FlowModel::config)
        .def("parameter_count", &FlowModel::parameter_count)
        .def("initialize_identity_actnorm", &FlowModel::initialize_identity_actnorm)
        .def("make_identity", &FlowModel::make_identity)
        .def("data_init", [](FlowModel& f, const py::object& x) { f.data_init(images_from(x)); }, py::arg("images"))
        .def("log_prob", [](const FlowModel& f, const Array& x) { return f.log_prob(to_tensor(x)); }, py::arg("x"))
        .def(
            "encode",
            [](const FlowModel& f, const Array& x) {
                const auto e = f.encode(to_tensor(x));
                py::list z;
                for (const auto& t : e.latents) z.append(to_array(t));
                return py::make_tuple(z, e.logp, e.logdet);
            },
            py::arg("x"))
        .def(
            "decode",
            [](const FlowModel& f, const std::vector<Array>& zs) {
                std::vector<Tensor> ts;
                for (const auto& z : zs) ts.push_back(to_tensor(z));
                return to_array(f.decode(ts));
            },
            py::arg("latents"))
        .def(
            "sample",
            [](const FlowModel& f, int n, std::uint64_t seed, Real temperature) {
                std::mt19937_64 rng(seed);
                return to_array(f.sample_batch(n, rng, temperature));
            },
            py::arg("n") = 1, py::arg("seed") = 0, py::arg("temperature") = 1.0)
        .def("get_parameters", &FlowModel::get_parameters)
        .def("set_parameters", [](FlowModel& f, const std::vector<Real>& p) { f.set_parameters(p); });

    m.def("bits_per_dim", &bits_per_dim, py::arg("logp"), py::arg("dims"));

    // data and training
    m.def(
        "make_dataset",
        [](const std::string& kind, int height, int width, int channels, int size, std::uint64_t seed) {
            DatasetSpec s;
            s.kind = parse_dataset_kind(kind);
            s.height = height;
            s.width = width;
            s.channels = channels;
            s.size = size;
            s.seed = seed;
            const auto imgs = make_dataset(s);
            Tensor batch(static_cast<int>(imgs.size()), {height, width, channels});
            for (std::size_t i = 0; i < imgs.size(); ++i) batch.set_image(static_cast<int>(i), imgs[i]);
            return to_array(batch);
        },
        py::arg("kind"), py::arg("height") = 8, py::arg("width") = 8, py::arg("channels") = 1,
        py::arg("size") = 512, py::arg("seed") = 1);
    m.def("discrete_gaussian_entropy_bits", &discrete_gaussian_entropy_bits, py::arg("mean"), py::arg("std"));

    m.def(
        "evaluate",
        [](const FlowModel& f, const py::object& pixels, std::uint64_t seed) {
            const auto r = evaluate(f, images_from(pixels), seed);
            return py::make_tuple(r.nll, r.bpd);
        },
        py::arg("model"), py::arg("pixels"), py::arg("seed") = 12345);

    m.def(
        "train",
        [](FlowModel& f, const py::object& pixels, int epochs, int batch_size, Real lr, std::uint64_t seed) {
            TrainOptions o;
            o.epochs = epochs;
            o.batch_size = batch_size;
            o.learning_rate = lr;
            o.seed = seed;
            const auto r = train(f, images_from(pixels), o);
            py::list bpd;
            for (const auto& e : r.epochs) bpd.append(e.bpd);
            py::dict d;
            d["initial_bpd"] = r.initial.bpd;
            d["bpd"] = bpd;
            d["diverged"] = r.diverged;
            return d;
        },
        py::arg("model"), py::arg("pixels"), py::arg("epochs") = 1, py::arg("batch_size") = 64,
        py::arg("lr") = 1e-3, py::arg("seed") = 0);

    // benchmark
    m.def(
        "bench",
        [](const std::vector<std::tuple<int, int, int>>& sizes, int repetitions, int batch, std::uint64_t seed) {
            BenchOptions o;
            o.sizes.clear();
            for (auto [h, w, c] : sizes) o.sizes.push_back({h, w, c});
            o.repetitions = repetitions;
            o.batch = batch;
            o.seed = seed;
            const auto r = run_bench(o);
            py::list rows;
            for (const auto& row : r.rows) {
                py::dict d;
                d["method"] = row.method;
                d["shape"] = py::make_tuple(row.shape.h, row.shape.w, row.shape.c);
                d["skipped"] = row.skipped;
                d["mean_s"] = row.mean_s;
                d["std_s"] = row.std_s;
                d["ratio_vs_ours"] = row.ratio_vs_ours;
                rows.append(d);
            }
            return rows;
        },
        py::arg("sizes") = std::vector<std::tuple<int, int, int>>{{16, 16, 4}, {32, 32, 12}},
        py::arg("repetitions") = 5, py::arg("batch") = 100, py::arg("seed") = 0);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"invflow"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
