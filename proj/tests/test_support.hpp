#pragma once

#include "evact/event.hpp"
#include "evact/representations.hpp"
#include "rng.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <filesystem>
#include <string>
#include <vector>

namespace evact::testing {

// Random stream with timestamps drawn from [0, span) and possible repeats.
inline EventStream random_stream(detail::SplitMix& rng, Geometry g, std::size_t n, Micros span) {
  std::vector<Event> ev(n);
  for (Event& e : ev) {
    e.t = static_cast<Micros>(rng.below(static_cast<std::uint64_t>(span)));
    e.x = static_cast<std::uint16_t>(rng.below(g.width));
    e.y = static_cast<std::uint16_t>(rng.below(g.height));
    e.p = static_cast<std::uint8_t>(rng.below(2));
  }
  return EventStream(g, std::move(ev));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("evact_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Per-frame window scan with no carried state: for each t_k, look at every
// event and keep the latest one inside [t_k - t_m, t_k].
inline std::vector<DenseArray> brute_force_frames(const EventStream& s, Micros dt, Micros t_m) {
  const Geometry g = s.geometry();
  const auto ev = s.events();
  const std::size_t n = static_cast<std::size_t>((s.t_end() - s.t_begin()) / dt);
  std::vector<DenseArray> out;
  for (std::size_t k = 1; k <= n; ++k) {
    const Micros t_k = s.t_begin() + static_cast<Micros>(k) * dt;
    std::vector<Micros> best(g.pixels() * 2, std::numeric_limits<Micros>::min());
    for (const Event& e : ev) {
      if (e.t < t_k - t_m || e.t > t_k) continue;
      Micros& b = best[(std::size_t{e.y} * g.width + e.x) * 2 + e.p];
      if (e.t > b) b = e.t;
    }
    DenseArray f(g.height, g.width, 2, std::numeric_limits<float>::quiet_NaN());
    for (std::size_t i = 0; i < best.size(); ++i) {
      if (best[i] == std::numeric_limits<Micros>::min()) continue;
      f.data[i] = static_cast<float>(static_cast<double>(best[i] - (t_k - t_m)) / static_cast<double>(t_m));
    }
    out.push_back(std::move(f));
  }
  return out;
}

// Bitwise equality, so NaN cells compare equal to NaN cells.
inline bool bit_identical(const DenseArray& a, const DenseArray& b) {
  return a.same_shape(b) && std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

}  // namespace evact::testing
