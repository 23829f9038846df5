#include "evact/blob_tracker.hpp"

#include "evact/errors.hpp"

#include <cmath>
#include <limits>

namespace evact {

void BlobTrackerConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("blob alpha must lie in (0, 1)");
  if (!(r_min > 0.0)) throw ArgumentError("blob r_min must be positive");
  if (n_samples < 1) throw ArgumentError("blob n_samples must be >= 1");
  if (!(w_min > 0.0)) throw ArgumentError("blob w_min must be positive");
  if (tau_w <= 0) throw ArgumentError("blob tau_w must be positive");
}

BlobTracker::BlobTracker(BlobTrackerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void BlobTracker::retire_stale(Micros t) {
  const double tau = static_cast<double>(cfg_.tau_w);
  std::size_t keep = 0;
  for (std::size_t i = 0; i < live_.size(); ++i) {
    BlobState& b = live_[i];
    const double decayed = b.w * std::exp(-static_cast<double>(t - b.t_last) / tau);
    if (decayed < cfg_.w_min) {
      // Retire at the moment the weight crossed the threshold.
      const double dt = tau * std::log(b.w / cfg_.w_min);
      b.retired = b.t_last + std::max<Micros>(0, static_cast<Micros>(std::ceil(dt)));
      b.retired = std::min(b.retired, t);
      retired_.push_back(std::move(b));
    } else {
      if (keep != i) live_[keep] = std::move(b);
      ++keep;
    }
  }
  live_.resize(keep);
}

void BlobTracker::push(const Event& e) {
  retire_stale(e.t);

  const double x = e.x;
  const double y = e.y;
  BlobState* best = nullptr;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (BlobState& b : live_) {
    const double dx = x - b.cx;
    const double dy = y - b.cy;
    if (std::abs(dx) > b.rx || std::abs(dy) > b.ry) continue;
    const double d2 = dx * dx + dy * dy;
    // live_ is ordered by id, so strict < keeps the lowest id on ties.
    if (d2 < best_d2) {
      best_d2 = d2;
      best = &b;
    }
  }

  if (!best) {
    BlobState b;
    b.id = next_id_++;
    b.cx = x;
    b.cy = y;
    b.rx = b.ry = cfg_.r_min;
    b.w = 1.0;
    b.birth = b.t_last = e.t;
    b.events = 1;
    b.history.push_back(BlobSample{e.t, b.cx, b.cy, b.rx, b.ry, b.w});
    live_.push_back(std::move(b));
    return;
  }

  BlobState& b = *best;
  const double a = cfg_.alpha;
  // Radius uses the centre before this event's update.
  b.rx = std::max(cfg_.r_min, a * b.rx + (1.0 - a) * std::abs(b.cx - x));
  b.ry = std::max(cfg_.r_min, a * b.ry + (1.0 - a) * std::abs(b.cy - y));
  b.cx = a * b.cx + (1.0 - a) * x;
  b.cy = a * b.cy + (1.0 - a) * y;
  b.w = b.w * std::exp(-static_cast<double>(e.t - b.t_last) / static_cast<double>(cfg_.tau_w)) + 1.0;
  b.t_last = e.t;
  ++b.events;
  b.history.push_back(BlobSample{e.t, b.cx, b.cy, b.rx, b.ry, b.w});
}

std::vector<BlobState> BlobTracker::finish(Micros t_end) {
  retire_stale(t_end);
  for (BlobState& b : live_) {
    b.retired = t_end;
    retired_.push_back(std::move(b));
  }
  live_.clear();
  return std::move(retired_);
}

std::vector<BlobState> track(const EventStream& stream, const BlobTrackerConfig& cfg) {
  BlobTracker tracker(cfg);
  for (const Event& e : stream.events()) tracker.push(e);
  return tracker.finish(stream.empty() ? 0 : stream.t_end());
}

std::vector<Micros> blob_sample_times(const BlobState& blob, std::uint32_t n_samples) {
  std::vector<Micros> times(n_samples, blob.birth);
  if (n_samples < 2) return times;
  const Micros span = blob.retired - blob.birth;
  for (std::uint32_t j = 0; j < n_samples; ++j) {
    times[j] = blob.birth + span * static_cast<Micros>(j) / static_cast<Micros>(n_samples - 1);
  }
  return times;
}

std::vector<float> extract_features(const BlobState& blob, const BlobTrackerConfig& cfg) {
  if (blob.history.empty()) throw ArgumentError("blob has no history samples");
  const std::uint32_t n = cfg.n_samples;
  const std::vector<Micros> times = blob_sample_times(blob, n);
  std::vector<float> out(std::size_t{5} * n);
  std::size_t h = 0;
  for (std::uint32_t j = 0; j < n; ++j) {
    // Zero-order hold: last sample at or before the query (the first sample
    // stands in for queries before it).
    while (h + 1 < blob.history.size() && blob.history[h + 1].t <= times[j]) ++h;
    const BlobSample& s = blob.history[h];
    out[j] = static_cast<float>(s.cx);
    out[n + j] = static_cast<float>(s.cy);
    out[2 * n + j] = static_cast<float>(s.rx);
    out[3 * n + j] = static_cast<float>(s.ry);
    out[4 * n + j] = static_cast<float>(s.w);
  }
  return out;
}

BlobClipPrediction classify_blobs(const FeatureSequence& blob_features, const SoftmaxHead& head,
                                  int fallback_class) {
  if (blob_features.count() == 0) return BlobClipPrediction{fallback_class, true};
  return BlobClipPrediction{predict_clip_mode(head, blob_features), false};
}

}  // namespace evact
