#pragma once

#include "evact/classifier.hpp"
#include "evact/event.hpp"
#include "evact/features.hpp"

#include <cstdint>
#include <vector>

namespace evact {

struct BlobTrackerConfig {
  double alpha{0.9};       // smoothing of centre and radius
  double r_min{50.0};      // lower bound on each radius, pixels
  std::uint32_t n_samples{100};
  double w_min{0.5};       // retirement threshold on decayed weight
  Micros tau_w{500'000};   // weight decay time constant

  void validate() const;
};

struct BlobSample {
  Micros t{0};
  double cx{0}, cy{0}, rx{0}, ry{0}, w{0};

  bool operator==(const BlobSample&) const = default;
};

struct BlobState {
  std::uint32_t id{0};
  double cx{0}, cy{0}, rx{0}, ry{0}, w{0};
  Micros birth{0};
  Micros t_last{0};
  Micros retired{0};
  std::size_t events{0};  // seed event included
  std::vector<BlobSample> history;

  bool operator==(const BlobState&) const = default;
};

// Incremental event clustering. Each event joins the live blob whose box
// |x - cx| <= rx, |y - cy| <= ry contains it (nearest centre, lowest id on ties)
// or seeds a new blob. Blobs whose decayed weight falls below w_min retire.
class BlobTracker {
 public:
  explicit BlobTracker(BlobTrackerConfig cfg);

  void push(const Event& e);
  // Retires every live blob at time `t_end` and returns all retired blobs in
  // retirement order.
  std::vector<BlobState> finish(Micros t_end);

  const std::vector<BlobState>& live() const { return live_; }

 private:
  void retire_stale(Micros t);

  BlobTrackerConfig cfg_;
  std::vector<BlobState> live_;
  std::vector<BlobState> retired_;
  std::uint32_t next_id_{0};
};

std::vector<BlobState> track(const EventStream& stream, const BlobTrackerConfig& cfg = {});

// Resamples (cx, cy, rx, ry, w) at n_samples evenly spaced times from birth to
// retirement with zero-order hold. Layout: all cx samples, then cy, rx, ry, w.
std::vector<float> extract_features(const BlobState& blob, const BlobTrackerConfig& cfg = {});

// Query timestamps used by extract_features.
std::vector<Micros> blob_sample_times(const BlobState& blob, std::uint32_t n_samples);

struct BlobClipPrediction {
  int label{0};
  bool fallback{false};  // clip had no blobs; label is the fallback class
};

// Mode of the per-blob argmax labels, lowest class on ties. A clip without
// blobs gets `fallback_class` and is flagged.
BlobClipPrediction classify_blobs(const FeatureSequence& blob_features, const SoftmaxHead& head,
                                  int fallback_class = 0);

}  // namespace evact
