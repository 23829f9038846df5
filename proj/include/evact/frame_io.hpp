#pragma once

#include "evact/representations.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evact {

// On-disk frame container:
//   "FRM1", u32 N, u32 H, u32 W, u32 C, i64 t0, i64 dt, i64 t_m,
//   then N*H*W*C little-endian f32, row-major with channels innermost.
// Undefined event-frame cells are stored as quiet NaN unless filled before export.
// Gray frames use the same container with C = 1; voxel grids use N = 1, C = B.
struct FrameFile {
  Micros t0{0};
  Micros dt{0};
  Micros t_m{0};
  std::vector<DenseArray> frames;
};

std::string serialize_frames(const FrameFile& file);
FrameFile parse_frames(std::string_view bytes);

FrameFile read_frame_file(const std::filesystem::path& path);
void write_frame_file(const std::filesystem::path& path, const FrameFile& file);

// Packs event frames for export; `fill` replaces NaN when set.
FrameFile to_frame_file(const std::vector<EventFrame>& frames, Micros t0, const FrameParams& params,
                        std::optional<float> fill);
FrameFile to_frame_file(const VoxelGrid& grid);

}  // namespace evact
