#include "evact/representations.hpp"

#include "evact/errors.hpp"

#include <algorithm>
#include <limits>

namespace evact {

namespace {

constexpr Micros kNever = std::numeric_limits<Micros>::min();
constexpr float kUndefined = std::numeric_limits<float>::quiet_NaN();

}  // namespace

std::size_t frame_count(const EventStream& stream, Micros dt) {
  if (dt <= 0) throw ArgumentError("frame interval dt must be positive");
  if (stream.empty()) return 0;
  return static_cast<std::size_t>((stream.t_end() - stream.t_begin()) / dt);
}

void for_each_frame(const EventStream& stream, const FrameParams& params,
                    const std::function<void(const EventFrame&)>& on_frame) {
  if (params.dt <= 0) throw ArgumentError("frame interval dt must be positive");
  if (params.t_m <= 0) throw ArgumentError("memory window t_m must be positive");
  if (stream.empty()) throw ArgumentError("no events");

  const Geometry& g = stream.geometry();
  const std::size_t n_frames = frame_count(stream, params.dt);
  const auto events = stream.events();

  // Latest timestamp per (pixel, polarity). Events are sorted, so overwriting
  // keeps the most recent one.
  std::vector<Micros> latest(g.pixels() * 2, kNever);
  EventFrame frame{DenseArray(g.height, g.width, 2, kUndefined), 0, params.t_m};

  std::size_t next = 0;
  for (std::size_t k = 1; k <= n_frames; ++k) {
    const Micros t_k = stream.t_begin() + static_cast<Micros>(k) * params.dt;
    while (next < events.size() && events[next].t <= t_k) {
      const Event& e = events[next++];
      latest[(std::size_t{e.y} * g.width + e.x) * 2 + e.p] = e.t;
    }
    const Micros window_start = t_k - params.t_m;
    frame.t_k = t_k;
    float* out = frame.values.data.data();
    for (std::size_t i = 0; i < latest.size(); ++i) {
      const Micros t = latest[i];
      out[i] = (t != kNever && t >= window_start) ? normalized_recency(t, t_k, params.t_m)
                                                  : kUndefined;
    }
    on_frame(frame);
  }
}

std::vector<EventFrame> build_frames(const EventStream& stream, const FrameParams& params) {
  std::vector<EventFrame> frames;
  if (!stream.empty()) frames.reserve(frame_count(stream, params.dt));
  for_each_frame(stream, params, [&](const EventFrame& f) { frames.push_back(f); });
  return frames;
}

DenseArray fill_undefined(const EventFrame& frame, float fill) {
  if (!(fill >= 0.0f && fill <= 1.0f)) throw ArgumentError("fill value must lie in [0, 1]");
  DenseArray out = frame.values;
  for (float& v : out.data) {
    if (std::isnan(v)) v = fill;
  }
  return out;
}

DenseArray downsample(const DenseArray& frame, std::uint32_t factor, Pooling pooling) {
  if (factor < 1) throw ArgumentError("downsample factor must be >= 1");
  if (factor == 1) return frame;
  const std::uint32_t oh = (frame.height + factor - 1) / factor;
  const std::uint32_t ow = (frame.width + factor - 1) / factor;
  const std::uint32_t c = frame.channels;
  DenseArray out(oh, ow, c);
  std::vector<double> acc(c);
  for (std::uint32_t oy = 0; oy < oh; ++oy) {
    const std::uint32_t y_end = std::min(frame.height, (oy + 1) * factor);
    for (std::uint32_t ox = 0; ox < ow; ++ox) {
      const std::uint32_t x_end = std::min(frame.width, (ox + 1) * factor);
      const double init = pooling == Pooling::kMax ? -std::numeric_limits<double>::infinity() : 0.0;
      std::fill(acc.begin(), acc.end(), init);
      for (std::uint32_t y = oy * factor; y < y_end; ++y) {
        for (std::uint32_t x = ox * factor; x < x_end; ++x) {
          const float* cell = &frame.data[frame.index(y, x, 0)];
          for (std::uint32_t ch = 0; ch < c; ++ch) {
            if (pooling == Pooling::kMax) {
              acc[ch] = std::max(acc[ch], static_cast<double>(cell[ch]));
            } else {
              acc[ch] += cell[ch];
            }
          }
        }
      }
      const double cells = static_cast<double>((y_end - oy * factor) * (x_end - ox * factor));
      for (std::uint32_t ch = 0; ch < c; ++ch) {
        out.at(oy, ox, ch) =
            static_cast<float>(pooling == Pooling::kMax ? acc[ch] : acc[ch] / cells);
      }
    }
  }
  return out;
}

VoxelGrid build_voxel_grid(const EventStream& stream, std::uint32_t bins) {
  if (bins < 2) throw ArgumentError("voxel grid needs at least 2 bins");
  if (stream.empty() || stream.t_end() == stream.t_begin()) {
    throw ArgumentError("degenerate duration: voxel grid needs two distinct timestamps");
  }
  const Geometry& g = stream.geometry();
  VoxelGrid grid{g, bins, stream.t_begin(), stream.t_end(),
                 std::vector<double>(g.pixels() * bins, 0.0)};
  const double span = static_cast<double>(grid.tn - grid.t0);
  const double scale = static_cast<double>(bins - 1);
  for (const Event& e : stream.events()) {
    const double t_star = scale * static_cast<double>(e.t - grid.t0) / span;
    const double s = polarity_sign(e.p);
    const auto lo = static_cast<std::uint32_t>(std::floor(t_star));
    const double frac = t_star - lo;
    double* cell = &grid.values[(std::size_t{e.y} * g.width + e.x) * bins];
    cell[lo] += s * (1.0 - frac);
    if (lo + 1 < bins && frac > 0.0) cell[lo + 1] += s * frac;
  }
  return grid;
}

std::vector<DenseArray> stack_channels(const std::vector<EventFrame>& frames,
                                       const std::vector<DenseArray>& gray, float fill) {
  if (frames.empty() || gray.empty()) {
    throw ArgumentError("stacking needs at least one event frame and one gray frame");
  }
  const std::size_t n = frames.size();
  const std::size_t n_gray = gray.size();
  std::vector<DenseArray> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const DenseArray events = fill_undefined(frames[k], fill);
    const DenseArray& g = gray[k * n_gray / n];
    if (g.channels != 1 || g.height != events.height || g.width != events.width) {
      throw ArgumentError("gray frame shape does not match the event frames");
    }
    DenseArray stacked(events.height, events.width, 3);
    for (std::uint32_t y = 0; y < events.height; ++y) {
      for (std::uint32_t x = 0; x < events.width; ++x) {
        const float v = g.at(y, x, 0);
        if (!(v >= 0.0f && v <= 1.0f)) throw ArgumentError("gray values must lie in [0, 1]");
        stacked.at(y, x, 0) = events.at(y, x, 0);
        stacked.at(y, x, 1) = events.at(y, x, 1);
        stacked.at(y, x, 2) = v;
      }
    }
    out.push_back(std::move(stacked));
  }
  return out;
}

}  // namespace evact
