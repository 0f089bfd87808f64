#include "invflow/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace invflow {

namespace {

template <class U>
U to_little(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        U r = 0;
        for (std::size_t k = 0; k < sizeof(U); ++k) {
            r = static_cast<U>((r << 8) | (v & 0xff));
            v >>= 8;
        }
        return r;
    } else {
        return v;
    }
}

void put_u32(std::ostream& out, std::uint32_t v) {
    v = to_little(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw FormatError("tensor file: truncated header");
    return to_little(v);
}

template <class F, class U>
void write_payload(std::ostream& out, std::span<const Real> data) {
    std::vector<U> buf(data.size());
    for (std::size_t q = 0; q < data.size(); ++q)
        buf[q] = to_little(std::bit_cast<U>(static_cast<F>(data[q])));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(U)));
}

template <class F, class U>
void read_payload(std::istream& in, std::span<Real> data) {
    std::vector<U> buf(data.size());
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(U))))
        throw FormatError("tensor file: truncated payload");
    for (std::size_t q = 0; q < data.size(); ++q)
        data[q] = static_cast<Real>(std::bit_cast<F>(to_little(buf[q])));
}

// PNM header tokens may be separated by whitespace and '#' comments.
int pnm_int(std::istream& in) {
    for (;;) {
        int ch = in.peek();
        if (ch == EOF) throw FormatError("pnm: unexpected end of header");
        if (ch == '#') {
            std::string ignored;
            std::getline(in, ignored);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int v = 0;
    if (!(in >> v) || v < 0) throw FormatError("pnm: bad header value");
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kTensorMagic, sizeof kTensorMagic);
    put_u32(out, kTensorVersion);
    put_u32(out, static_cast<std::uint32_t>(sizeof(Real)));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    if (t.rank() == 4) put_u32(out, static_cast<std::uint32_t>(t.batch()));
    put_u32(out, static_cast<std::uint32_t>(t.height()));
    put_u32(out, static_cast<std::uint32_t>(t.width()));
    put_u32(out, static_cast<std::uint32_t>(t.channels()));
    if constexpr (sizeof(Real) == 8)
        write_payload<double, std::uint64_t>(out, t.data());
    else
        write_payload<float, std::uint32_t>(out, t.data());
    if (!out) throw FormatError("tensor file: write failed");
}

Tensor read_tensor(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kTensorMagic, sizeof magic) != 0)
        throw FormatError("tensor file: bad magic");
    const auto version = get_u32(in);
    if (version != kTensorVersion)
        throw FormatError("tensor file: unsupported version " + std::to_string(version));
    const auto width = get_u32(in);
    if (width != 4 && width != 8)
        throw FormatError("tensor file: unsupported element width " + std::to_string(width));
    const auto rank = get_u32(in);
    if (rank != 3 && rank != 4) throw FormatError("tensor file: rank must be 3 or 4");
    int batch = 1;
    if (rank == 4) batch = static_cast<int>(get_u32(in));
    Shape s;
    s.h = static_cast<int>(get_u32(in));
    s.w = static_cast<int>(get_u32(in));
    s.c = static_cast<int>(get_u32(in));
    if (s.h < 0 || s.w < 0 || s.c < 0 || batch < 0 || s.size() > (std::size_t{1} << 32))
        throw FormatError("tensor file: implausible dimensions");
    Tensor t = rank == 4 ? Tensor(batch, s) : Tensor(s);
    if (width == 8)
        read_payload<double, std::uint64_t>(in, t.data());
    else
        read_payload<float, std::uint32_t>(in, t.data());
    return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_tensor(in);
}

Tensor read_pnm(std::istream& in) {
    char p = 0;
    char kind = 0;
    if (!in.get(p) || !in.get(kind) || p != 'P' || kind < '2' || kind > '6' || kind == '4')
        throw FormatError("pnm: expected P2, P3, P5 or P6");
    const bool color = kind == '3' || kind == '6';
    const bool binary = kind == '5' || kind == '6';
    const int w = pnm_int(in);
    const int h = pnm_int(in);
    const int maxval = pnm_int(in);
    if (maxval < 1 || maxval > 65535) throw FormatError("pnm: maxval out of range");
    const int c = color ? 3 : 1;
    Tensor img({h, w, c});
    auto out = img.data();
    auto rescale = [maxval](int v) -> Real {
        if (v > maxval) throw FormatError("pnm: sample exceeds maxval");
        if (maxval == 255) return static_cast<Real>(v);
        return std::round(static_cast<Real>(v) * 255 / maxval);
    };
    if (binary) {
        in.get();  // single whitespace after maxval
        const std::size_t bytes = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> buf(out.size() * bytes);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw FormatError("pnm: truncated raster");
        for (std::size_t q = 0; q < out.size(); ++q) {
            int v = bytes == 2 ? (buf[2 * q] << 8) | buf[2 * q + 1] : buf[q];
            out[q] = rescale(v);
        }
    } else {
        for (auto& v : out) v = rescale(pnm_int(in));
    }
    return img;
}

Tensor read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_pnm(in);
}

void write_pnm(std::ostream& out, const Tensor& img) {
    if (img.rank() != 3 || (img.channels() != 1 && img.channels() != 3))
        throw std::invalid_argument("write_pnm: expects an (H, W, 1) or (H, W, 3) image");
    out << (img.channels() == 1 ? "P5" : "P6") << '\n'
        << img.width() << ' ' << img.height() << '\n'
        << 255 << '\n';
    std::vector<unsigned char> buf(img.size());
    auto d = img.data();
    for (std::size_t q = 0; q < buf.size(); ++q)
        buf[q] = static_cast<unsigned char>(std::clamp<Real>(std::round(d[q]), 0, 255));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void write_pnm(const std::filesystem::path& path, const Tensor& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    write_pnm(out, img);
}

}  // namespace invflow
