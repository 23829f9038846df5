#pragma once

#include "evact/event.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace evact {

// Row-major H x W x C array, channels innermost.
struct DenseArray {
  std::uint32_t height{0};
  std::uint32_t width{0};
  std::uint32_t channels{0};
  std::vector<float> data;

  DenseArray() = default;
  DenseArray(std::uint32_t h, std::uint32_t w, std::uint32_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(std::size_t{h} * w * c, fill) {}

  std::size_t index(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
    return (std::size_t{y} * width + x) * channels + c;
  }
  float& at(std::uint32_t y, std::uint32_t x, std::uint32_t c) { return data[index(y, x, c)]; }
  float at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const { return data[index(y, x, c)]; }
  bool same_shape(const DenseArray& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Normalised FIFO frame: channel p holds (t - (t_k - t_m)) / t_m for the latest
// event of polarity p inside [t_k - t_m, t_k], NaN where no such event exists.
struct EventFrame {
  DenseArray values;  // C = 2, channel index = polarity
  Micros t_k{0};
  Micros t_m{0};
};

struct FrameParams {
  Micros dt{150'000};
  Micros t_m{512'000};
};

// Value stored for an event at time t in the frame ending at t_k.
inline float normalized_recency(Micros t, Micros t_k, Micros t_m) {
  return static_cast<float>(static_cast<double>(t - (t_k - t_m)) / static_cast<double>(t_m));
}

// Number of frames ⌊(t^n - t^0) / dt⌋ a stream yields.
std::size_t frame_count(const EventStream& stream, Micros dt);

// Builds the frames at t_k = t^0 + k dt, k = 1..N, in one incremental pass.
// `on_frame` receives each frame in order; the reference is only valid during the call.
void for_each_frame(const EventStream& stream, const FrameParams& params,
                    const std::function<void(const EventFrame&)>& on_frame);
std::vector<EventFrame> build_frames(const EventStream& stream, const FrameParams& params = {});

// Replaces NaN cells with `fill` (in [0, 1]).
DenseArray fill_undefined(const EventFrame& frame, float fill = 0.0f);

enum class Pooling { kMax, kMean };

// Block pooling by `factor`; ragged border blocks pool over the cells present.
DenseArray downsample(const DenseArray& frame, std::uint32_t factor,
                      Pooling pooling = Pooling::kMax);

// Spatio-temporal voxel grid with a triangular temporal kernel. Each event adds
// s(p) * max(0, 1 - |b - t*|) to bins b adjacent to t* = (B-1)(t - t^0)/(t^n - t^0).
struct VoxelGrid {
  Geometry geometry;
  std::uint32_t bins{0};
  Micros t0{0};
  Micros tn{0};
  std::vector<double> values;  // H x W x B, bins innermost

  double at(std::uint32_t y, std::uint32_t x, std::uint32_t b) const {
    return values[(std::size_t{y} * geometry.width + x) * bins + b];
  }
};

VoxelGrid build_voxel_grid(const EventStream& stream, std::uint32_t bins = 5);

// Pairs frame k (0-based) with gray[⌊k N'/N⌋] into 3-channel arrays: two filled
// event channels plus the gray channel.
std::vector<DenseArray> stack_channels(const std::vector<EventFrame>& frames,
                                       const std::vector<DenseArray>& gray, float fill = 0.0f);

}  // namespace evact
