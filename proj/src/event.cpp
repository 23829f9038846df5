#include "evact/event.hpp"

#include "evact/errors.hpp"

#include <algorithm>

namespace evact {

EventStream::EventStream(Geometry geometry, std::vector<Event> events)
    : geometry_(geometry), events_(std::move(events)) {
  if (geometry_.height == 0 || geometry_.width == 0) {
    throw ValidationError("stream geometry must be non-empty");
  }
  for (std::size_t i = 0; i < events_.size(); ++i) {
    const Event& e = events_[i];
    if (e.x >= geometry_.width || e.y >= geometry_.height) {
      throw ValidationError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + ", " +
                            std::to_string(e.y) + ") lies outside " +
                            std::to_string(geometry_.height) + "x" +
                            std::to_string(geometry_.width));
    }
    if (e.t < 0) throw ValidationError("event " + std::to_string(i) + " has negative timestamp");
    if (e.p > 1) throw ValidationError("event " + std::to_string(i) + " has polarity > 1");
  }
  if (!std::is_sorted(events_.begin(), events_.end(),
                      [](const Event& a, const Event& b) { return a.t < b.t; })) {
    std::stable_sort(events_.begin(), events_.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
  }
}

}  // namespace evact
