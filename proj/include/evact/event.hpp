#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace evact {

// Timestamps are integer microseconds everywhere.
using Micros = std::int64_t;

struct Geometry {
  std::uint32_t height{0};  // rows (H)
  std::uint32_t width{0};   // cols (W)

  std::size_t pixels() const { return std::size_t{height} * width; }
  bool operator==(const Geometry&) const = default;
};

// Polarity 1 = positive (brighter), 0 = negative.
struct Event {
  Micros t{0};
  std::uint16_t x{0};
  std::uint16_t y{0};
  std::uint8_t p{0};

  bool operator==(const Event&) const = default;
};

// Time-sorted event sequence with its sensor geometry. Construction validates
// bounds and stably sorts by timestamp; the object is immutable afterwards.
class EventStream {
 public:
  EventStream() = default;
  EventStream(Geometry geometry, std::vector<Event> events);

  const Geometry& geometry() const { return geometry_; }
  std::span<const Event> events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  Micros t_begin() const { return events_.front().t; }
  Micros t_end() const { return events_.back().t; }

  bool operator==(const EventStream&) const = default;

 private:
  Geometry geometry_{};
  std::vector<Event> events_;
};

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct RoiRect {
  std::uint32_t x0{0}, y0{0}, x1{0}, y1{0};

  bool valid_for(const Geometry& g) const {
    return x0 < x1 && x1 <= g.width && y0 < y1 && y1 <= g.height;
  }
};

struct Clip {
  EventStream stream;
  int label{0};
  std::string subject_id;
  std::string config_id;
};

// +1 for positive polarity, -1 for negative.
inline int polarity_sign(std::uint8_t p) { return p ? 1 : -1; }

}  // namespace evact
