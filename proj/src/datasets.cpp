#include "invflow/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "invflow/tensor_io.hpp"

namespace invflow {

std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::GaussianBlobs: return "gaussian-blobs";
        case DatasetKind::Checkerboard: return "checkerboard";
        case DatasetKind::Bars: return "bars";
        case DatasetKind::ImageFolder: return "image-folder";
        case DatasetKind::GaussianIid: return "gaussian-iid";
        case DatasetKind::Uniform: return "uniform";
    }
    return "?";
}

DatasetKind parse_dataset_kind(const std::string& s) {
    for (auto k : {DatasetKind::GaussianBlobs, DatasetKind::Checkerboard, DatasetKind::Bars,
                   DatasetKind::ImageFolder, DatasetKind::GaussianIid, DatasetKind::Uniform})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown dataset '" + s + "'");
}

namespace {

using Rng = std::mt19937_64;

Real quantize(Real v) { return std::clamp(std::round(v), Real(0), Real(255)); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
Real uniform_real(Rng& rng, Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(rng); }

Tensor blobs(const Shape& s, Rng& rng) {
    Tensor img(s);
    const int count = uniform_int(rng, 1, 3);
    std::vector<Real> background(static_cast<std::size_t>(s.c));
    for (auto& b : background) b = uniform_real(rng, 10, 50);
    for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j)
            for (int c = 0; c < s.c; ++c) img(i, j, c) = background[static_cast<std::size_t>(c)];
    for (int q = 0; q < count; ++q) {
        const Real ci = uniform_real(rng, 0, s.h - 1), cj = uniform_real(rng, 0, s.w - 1);
        const Real width = uniform_real(rng, 0.8, 0.25 * std::max(s.h, s.w) + 1);
        std::vector<Real> amp(static_cast<std::size_t>(s.c));
        for (auto& a : amp) a = uniform_real(rng, 80, 200);
        for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
                const Real r2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
                const Real g = std::exp(-r2 / (2 * width * width));
                for (int c = 0; c < s.c; ++c) img(i, j, c) += amp[static_cast<std::size_t>(c)] * g;
            }
    }
    for (Real& v : img.data()) v = quantize(v);
    return img;
}

Tensor checkerboard(const Shape& s, Rng& rng) {
    Tensor img(s);
    const int cell = 1 << uniform_int(rng, 0, 2);
    const int phase = uniform_int(rng, 0, 1);
    std::vector<Real> lo(static_cast<std::size_t>(s.c)), hi(lo.size());
    for (std::size_t c = 0; c < lo.size(); ++c) {
        lo[c] = uniform_real(rng, 16, 64);
        hi[c] = uniform_real(rng, 176, 240);
    }
    for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
            const bool on = ((i / cell + j / cell + phase) % 2) != 0;
            for (int c = 0; c < s.c; ++c) {
                const std::size_t cc = static_cast<std::size_t>(c);
                img(i, j, c) = quantize((on ? hi[cc] : lo[cc]) + uniform_real(rng, -3, 3));
            }
        }
    return img;
}

Tensor bars(const Shape& s, Rng& rng) {
    Tensor img(s);
    const bool vertical = uniform_int(rng, 0, 1) != 0;
    const int n = vertical ? s.w : s.h;
    std::vector<bool> on(static_cast<std::size_t>(n));
    for (std::size_t q = 0; q < on.size(); ++q) on[q] = uniform_int(rng, 0, 1) != 0;
    const Real level = uniform_real(rng, 160, 250);
    for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
            const bool lit = on[static_cast<std::size_t>(vertical ? j : i)];
            for (int c = 0; c < s.c; ++c) img(i, j, c) = quantize(lit ? level : 8 + uniform_real(rng, 0, 8));
        }
    return img;
}

Tensor gaussian_iid(const DatasetSpec& spec, Rng& rng) {
    Tensor img(Shape{spec.height, spec.width, spec.channels});
    std::normal_distribution<Real> normal(spec.gaussian_mean, spec.gaussian_std);
    for (Real& v : img.data()) v = quantize(normal(rng));
    return img;
}

Tensor uniform(const Shape& s, Rng& rng) {
    Tensor img(s);
    for (Real& v : img.data()) v = uniform_int(rng, 0, 255);
    return img;
}

std::vector<Tensor> image_folder(const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(spec.folder))
        throw std::invalid_argument("image-folder: not a directory: " + spec.folder.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(spec.folder)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (spec.size > 0 && files.size() > static_cast<std::size_t>(spec.size))
        files.resize(static_cast<std::size_t>(spec.size));
    std::vector<Tensor> out;
    for (const auto& f : files) {
        Tensor img = read_pnm(f);
        if (img.channels() != spec.channels)
            throw std::invalid_argument("image-folder: " + f.string() + " has " +
                                        std::to_string(img.channels()) + " channels, expected " +
                                        std::to_string(spec.channels));
        if (img.height() < spec.height || img.width() < spec.width)
            throw std::invalid_argument("image-folder: " + f.string() + " is smaller than " +
                                        std::to_string(spec.height) + "x" + std::to_string(spec.width));
        const int oi = (img.height() - spec.height) / 2, oj = (img.width() - spec.width) / 2;
        Tensor crop(Shape{spec.height, spec.width, spec.channels});
        for (int i = 0; i < spec.height; ++i)
            for (int j = 0; j < spec.width; ++j)
                for (int c = 0; c < spec.channels; ++c) crop(i, j, c) = img(i + oi, j + oj, c);
        out.push_back(std::move(crop));
    }
    if (out.empty()) throw std::invalid_argument("image-folder: no images in " + spec.folder.string());
    return out;
}

}  // namespace

std::vector<Tensor> make_dataset(const DatasetSpec& spec) {
    if (spec.height < 1 || spec.width < 1 || spec.channels < 1)
        throw std::invalid_argument("dataset: image shape must be positive");
    if (spec.kind == DatasetKind::ImageFolder) return image_folder(spec);
    if (spec.size < 1) throw std::invalid_argument("dataset: size must be positive");
    const Shape s{spec.height, spec.width, spec.channels};
    Rng rng(spec.seed);
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(spec.size));
    for (int n = 0; n < spec.size; ++n) {
        switch (spec.kind) {
            case DatasetKind::GaussianBlobs: out.push_back(blobs(s, rng)); break;
            case DatasetKind::Checkerboard: out.push_back(checkerboard(s, rng)); break;
            case DatasetKind::Bars: out.push_back(bars(s, rng)); break;
            case DatasetKind::GaussianIid: out.push_back(gaussian_iid(spec, rng)); break;
            case DatasetKind::Uniform: out.push_back(uniform(s, rng)); break;
            case DatasetKind::ImageFolder: break;
        }
    }
    return out;
}

Tensor dequantize(const Tensor& pixels, std::mt19937_64& rng) {
    Tensor x = pixels;
    std::uniform_real_distribution<Real> u(0, 1);
    for (Real& v : x.data()) {
        if (!(v >= 0 && v <= 255)) throw std::domain_error("dequantize: pixel value out of 0..255");
        Real r = u(rng);
        if (r >= 1) r = std::nextafter(Real(1), Real(0));
        v = (v + r) / 256;
    }
    return x;
}

Real discrete_gaussian_entropy_bits(Real mean, Real std) {
    auto cdf = [&](Real v) { return 0.5 * std::erfc(-(v - mean) / (std * std::sqrt(Real(2)))); };
    Real h = 0;
    for (int v = 0; v < 256; ++v) {
        const Real lo = v == 0 ? 0 : cdf(v - 0.5);
        const Real hi = v == 255 ? 1 : cdf(v + 0.5);
        const Real p = hi - lo;
        if (p > 0) h -= p * std::log2(p);
    }
    return h;
}

}  // namespace invflow
