#pragma once

#include <filesystem>
#include <iosfwd>

#include "invflow/model.hpp"

namespace invflow {

// Checkpoint layout (integers little-endian):
//
//   bytes 0..7    magic "IVFCHKPT"
//   bytes 8..11   u32 format version
//   bytes 12..15  u32 length of the JSON header in bytes
//   JSON header   {"version", "model": {...config...}, "layers": [{"kind", "level", "tensors"}, ...]}
//   then, for every manifest entry in order, its tensors in the raw tensor format
//
// Layers are listed level by level: the flow steps in order, then the split
// prior of the level if there is one.
inline constexpr char kCheckpointMagic[8] = {'I', 'V', 'F', 'C', 'H', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const FlowModel& model);
FlowModel read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const FlowModel& model);
FlowModel load_checkpoint(const std::filesystem::path& path);

}  // namespace invflow
