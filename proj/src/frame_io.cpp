#include "evact/frame_io.hpp"

#include "binary_io.hpp"

#include <optional>

namespace evact {

namespace {
constexpr std::string_view kMagic = "FRM1";
}

std::string serialize_frames(const FrameFile& file) {
  detail::ByteWriter out;
  const DenseArray shape = file.frames.empty() ? DenseArray{} : file.frames.front();
  out.put_bytes(kMagic);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(file.frames.size()));
  out.put<std::uint32_t>(shape.height);
  out.put<std::uint32_t>(shape.width);
  out.put<std::uint32_t>(shape.channels);
  out.put<std::int64_t>(file.t0);
  out.put<std::int64_t>(file.dt);
  out.put<std::int64_t>(file.t_m);
  for (const DenseArray& f : file.frames) {
    if (!f.same_shape(shape)) throw ArgumentError("all frames in a file must share one shape");
    out.put_bytes(std::string_view(reinterpret_cast<const char*>(f.data.data()),
                                   f.data.size() * sizeof(float)));
  }
  return out.take();
}

FrameFile parse_frames(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.get_bytes(4) != kMagic) throw ParseError("bad magic, expected FRM1", 0);
  const auto n = in.get<std::uint32_t>();
  const auto h = in.get<std::uint32_t>();
  const auto w = in.get<std::uint32_t>();
  const auto c = in.get<std::uint32_t>();
  FrameFile file;
  file.t0 = in.get<std::int64_t>();
  file.dt = in.get<std::int64_t>();
  file.t_m = in.get<std::int64_t>();
  const std::size_t cells = std::size_t{h} * w * c;
  if (n > 0 && in.remaining() / sizeof(float) / n != cells) {
    throw ParseError("truncated payload", in.pos());
  }
  if (in.remaining() != std::size_t{n} * cells * sizeof(float)) {
    throw ParseError("truncated payload", in.pos());
  }
  file.frames.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    DenseArray f(h, w, c);
    const auto raw = in.get_bytes(cells * sizeof(float));
    std::memcpy(f.data.data(), raw.data(), raw.size());
    file.frames.push_back(std::move(f));
  }
  return file;
}

FrameFile read_frame_file(const std::filesystem::path& path) {
  return parse_frames(detail::read_file(path));
}

void write_frame_file(const std::filesystem::path& path, const FrameFile& file) {
  detail::write_file_atomic(path, serialize_frames(file));
}

FrameFile to_frame_file(const std::vector<EventFrame>& frames, Micros t0, const FrameParams& params,
                        std::optional<float> fill) {
  FrameFile file{t0, params.dt, params.t_m, {}};
  file.frames.reserve(frames.size());
  for (const EventFrame& f : frames) {
    file.frames.push_back(fill ? fill_undefined(f, *fill) : f.values);
  }
  return file;
}

FrameFile to_frame_file(const VoxelGrid& grid) {
  DenseArray a(grid.geometry.height, grid.geometry.width, grid.bins);
  for (std::size_t i = 0; i < grid.values.size(); ++i) a.data[i] = static_cast<float>(grid.values[i]);
  FrameFile file{grid.t0, grid.tn - grid.t0, 0, {}};
  file.frames.push_back(std::move(a));
  return file;
}

}  // namespace evact
