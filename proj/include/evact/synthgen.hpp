#pragma once

#include "evact/event.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace evact {

// Default class taxonomy: four motion patterns and two near-static bodies
// whose only signal is a slow breathing-like pulsation of the outline.
enum class SynthPattern : int {
  kTranslateLeft = 0,
  kTranslateRight = 1,
  kOscillateVertical = 2,
  kLocalJitter = 3,
  kStaticWide = 4,
  kStaticTall = 5,
};

inline constexpr int kSynthClassCount = 6;

std::string synth_class_name(int class_id);
bool synth_class_is_motion(int class_id);

struct SynthConfig {
  int class_id{0};
  Micros duration{3'000'000};
  Geometry geometry{180, 250};
  double noise_rate{0.05};        // background events per pixel per second
  std::uint64_t seed{0};
  double speed{40.0};             // px/s for the translating classes
  double amplitude{20.0};         // px, vertical oscillation
  double body_radius{14.0};       // px
  double contrast_threshold{0.2}; // log-intensity step per event
  Micros step{1'000};             // renderer time step

  void validate() const;
};

// Renders a bright body moving over a dark background, emits events where the
// per-pixel log intensity crosses the contrast threshold, then adds Poisson
// background noise with uniform placement and random polarity. Output is a
// pure function of the config.
Clip generate_clip(const SynthConfig& cfg);

// Body centre and semi-axes at time t. Per-clip variations (start position,
// size, phase) are drawn from the seed, so this matches generate_clip.
struct SynthBodyPose {
  double cx{0.0}, cy{0.0};
  double ax{0.0}, ay{0.0};
};
SynthBodyPose synth_body_pose(const SynthConfig& cfg, Micros t);

// Number of signal (non-noise) events a config produces; used by tests that
// compare class families.
std::size_t count_signal_events(const SynthConfig& cfg);

struct DatasetSpec {
  int classes{kSynthClassCount};
  int train_per_class{50};
  int test_per_class{20};
  std::uint64_t base_seed{1};
  SynthConfig base;               // class_id and seed are overwritten per clip
  double test_noise_scale{1.0};   // multiplies noise_rate on the test split only
};

// Seed of clip `index` of `class_id`. Train and test draw from disjoint ranges.
std::uint64_t synth_clip_seed(const DatasetSpec& spec, bool test, int class_id, int index);

// Writes clips/<split>/<class>_<index>.evs plus train.json and test.json
// manifests under `out_dir`. Returns the manifest paths (train, test).
std::pair<std::filesystem::path, std::filesystem::path> generate_dataset(
    const DatasetSpec& spec, const std::filesystem::path& out_dir, int workers = 1);

}  // namespace evact
