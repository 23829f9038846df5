#pragma once

#include "evact/event.hpp"

namespace evact {

// Keeps events inside `roi` and re-bases them so the output geometry is the
// ROI size. Throws ArgumentError when `roi` does not fit the stream.
EventStream crop_roi(const EventStream& stream, const RoiRect& roi);

// Drops an event when a previously *retained* event at the same pixel or one of
// its 8 neighbours has a timestamp in (t - dt_min, t). Single forward pass.
EventStream refractory_filter(const EventStream& stream, Micros dt_min);

struct DenoiseParams {
  Micros tau{10'000};
  int min_support{1};
};

// Background-activity filter in the time-surface family: an event survives when
// at least `min_support` of its 8 neighbours saw an event (any polarity) within
// [t - tau, t]. The recency map is updated by every input event, kept or not.
//
// The exact scoring rule of the published time-surface denoiser is not
// available; this neighbour-support rule stands in for it.
EventStream time_surface_denoise(const EventStream& stream, const DenoiseParams& params = {});

}  // namespace evact
