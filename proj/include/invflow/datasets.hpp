#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "invflow/tensor.hpp"

namespace invflow {

enum class DatasetKind : std::uint8_t {
    GaussianBlobs,
    Checkerboard,
    Bars,
    ImageFolder,
    GaussianIid,  // every pixel iid round(N(mean, std)) clamped to 0..255
    Uniform,      // every pixel iid uniform on 0..255
};

std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(const std::string& s);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Checkerboard;
    int height = 8;
    int width = 8;
    int channels = 1;
    int size = 512;
    std::uint64_t seed = 1;
    std::filesystem::path folder;  // image-folder only
    Real gaussian_mean = 128;      // gaussian-iid only, in pixel units
    Real gaussian_std = 32;
};

/// Images with integer pixel values in 0..255, regenerated identically from
/// the seed. image-folder reads every .pgm/.ppm/.pnm file in name order and
/// center-crops it to H x W (size caps the count when positive).
std::vector<Tensor> make_dataset(const DatasetSpec& spec);

/// x = (v + u) / 256 with u ~ U[0, 1). Throws std::domain_error for pixels
/// outside 0..255.
Tensor dequantize(const Tensor& pixels, std::mt19937_64& rng);

/// Entropy in bits of round(N(mean, std)) clamped to 0..255.
Real discrete_gaussian_entropy_bits(Real mean, Real std);

}  // namespace invflow
