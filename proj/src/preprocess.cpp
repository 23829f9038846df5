#include "evact/preprocess.hpp"

#include "evact/errors.hpp"

#include <limits>
#include <vector>

namespace evact {

namespace {

constexpr Micros kNever = std::numeric_limits<Micros>::min();

// Calls fn(index) for every in-bounds pixel of the 3x3 block centred on (x, y).
template <typename Fn>
void for_each_neighbour(const Geometry& g, int x, int y, bool include_centre, Fn&& fn) {
  const int w = static_cast<int>(g.width);
  const int h = static_cast<int>(g.height);
  for (int dy = -1; dy <= 1; ++dy) {
    const int ny = y + dy;
    if (ny < 0 || ny >= h) continue;
    for (int dx = -1; dx <= 1; ++dx) {
      if (!include_centre && dx == 0 && dy == 0) continue;
      const int nx = x + dx;
      if (nx < 0 || nx >= w) continue;
      fn(static_cast<std::size_t>(ny) * g.width + static_cast<std::size_t>(nx));
    }
  }
}

}  // namespace

EventStream crop_roi(const EventStream& stream, const RoiRect& roi) {
  if (!roi.valid_for(stream.geometry())) {
    throw ArgumentError("roi (" + std::to_string(roi.x0) + "," + std::to_string(roi.y0) + ")-(" +
                        std::to_string(roi.x1) + "," + std::to_string(roi.y1) +
                        ") does not fit the stream geometry");
  }
  std::vector<Event> kept;
  for (const Event& e : stream.events()) {
    if (e.x >= roi.x0 && e.x < roi.x1 && e.y >= roi.y0 && e.y < roi.y1) {
      kept.push_back(Event{e.t, static_cast<std::uint16_t>(e.x - roi.x0),
                           static_cast<std::uint16_t>(e.y - roi.y0), e.p});
    }
  }
  return EventStream(Geometry{roi.y1 - roi.y0, roi.x1 - roi.x0}, std::move(kept));
}

EventStream refractory_filter(const EventStream& stream, Micros dt_min) {
  if (dt_min < 0) throw ArgumentError("refractory interval must be non-negative");
  const Geometry& g = stream.geometry();
  // Last retained timestamp per pixel. Because events arrive sorted, an earlier
  // retained event at the same pixel can only be in the window if the latest is.
  std::vector<Micros> last(g.pixels(), kNever);
  std::vector<Event> kept;
  kept.reserve(stream.size());
  for (const Event& e : stream.events()) {
    bool suppressed = false;
    for_each_neighbour(g, e.x, e.y, /*include_centre=*/true, [&](std::size_t i) {
      const Micros t = last[i];
      if (t != kNever && t < e.t && t > e.t - dt_min) suppressed = true;
    });
    if (suppressed) continue;
    last[std::size_t{e.y} * g.width + e.x] = e.t;
    kept.push_back(e);
  }
  return EventStream(g, std::move(kept));
}

EventStream time_surface_denoise(const EventStream& stream, const DenoiseParams& params) {
  if (params.tau <= 0) throw ArgumentError("denoise tau must be positive");
  if (params.min_support < 1) throw ArgumentError("denoise min_support must be >= 1");
  const Geometry& g = stream.geometry();
  std::vector<Micros> last(g.pixels(), kNever);
  std::vector<Event> kept;
  kept.reserve(stream.size());
  for (const Event& e : stream.events()) {
    int support = 0;
    for_each_neighbour(g, e.x, e.y, /*include_centre=*/false, [&](std::size_t i) {
      const Micros t = last[i];
      if (t != kNever && t >= e.t - params.tau) ++support;
    });
    last[std::size_t{e.y} * g.width + e.x] = e.t;
    if (support >= params.min_support) kept.push_back(e);
  }
  return EventStream(g, std::move(kept));
}

}  // namespace evact
