#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "invflow/tensor.hpp"

namespace invflow {

/// Raised for malformed or incompatible files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raw tensor file layout (all integers little-endian):
//
//   bytes 0..7    magic "IVFTENSR"
//   bytes 8..11   u32 format version (1)
//   bytes 12..15  u32 bytes per element (8 = IEEE-754 binary64, 4 = binary32)
//   u32 rank (3 or 4), then rank x u32 dims: (H, W, C) or (N, H, W, C)
//   payload: N*H*W*C little-endian values in channel-fastest order
inline constexpr char kTensorMagic[8] = {'I', 'V', 'F', 'T', 'E', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Reads a PGM or PPM image (P2, P3, P5, P6) into an (H, W, 1|3) tensor of
/// values in 0..255. Images with maxval other than 255 are rescaled and rounded.
Tensor read_pnm(const std::filesystem::path& path);
Tensor read_pnm(std::istream& in);

/// Writes a binary PGM (C = 1) or PPM (C = 3). Values are rounded and
/// clamped to 0..255.
void write_pnm(const std::filesystem::path& path, const Tensor& img);
void write_pnm(std::ostream& out, const Tensor& img);

}  // namespace invflow
