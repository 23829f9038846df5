#include "evact/synthgen.hpp"

#include "evact/errors.hpp"
#include "evact/event_io.hpp"
#include "evact/manifest.hpp"
#include "rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

namespace evact {

namespace {

constexpr double kBackground = 0.1;
constexpr double kForeground = 0.6;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Stream salts so trajectory, renderer jitter and noise never share draws.
constexpr std::uint64_t kSaltRender = 0x5bd1e995ULL;
constexpr std::uint64_t kSaltNoise = 0xc2b2ae3d27d4eb4fULL;

// Everything random about a clip's body, drawn once from the seed.
struct Trajectory {
  SynthPattern pattern{};
  double x0{0.0}, y0{0.0};
  double ax{0.0}, ay{0.0};
  double speed{0.0};
  double phase[4]{};
  double freq[4]{};
  double jitter_amp{0.0};
  double breathe{0.0};
};

Trajectory make_trajectory(const SynthConfig& cfg) {
  detail::SplitMix rng(cfg.seed);
  Trajectory tr;
  tr.pattern = static_cast<SynthPattern>(cfg.class_id);
  const double r = cfg.body_radius * rng.uniform(0.85, 1.15);
  tr.speed = cfg.speed * rng.uniform(0.8, 1.2);
  for (int i = 0; i < 4; ++i) {
    tr.phase[i] = rng.uniform(0.0, kTwoPi);
    tr.freq[i] = rng.uniform(2.0, 3.0);
  }
  tr.jitter_amp = 4.0;
  tr.breathe = 0.02;

  const double w = cfg.geometry.width;
  const double h = cfg.geometry.height;
  switch (tr.pattern) {
    case SynthPattern::kStaticWide:
      tr.ax = 1.4 * r;
      tr.ay = 0.7 * r;
      break;
    case SynthPattern::kStaticTall:
      tr.ax = 0.7 * r;
      tr.ay = 1.4 * r;
      break;
    default:
      tr.ax = tr.ay = r;
  }
  const double margin_x = std::min(w / 2.0, tr.ax + 4.0);
  const double margin_y = std::min(h / 2.0, tr.ay + 4.0);
  const double travel = tr.speed * static_cast<double>(cfg.duration) * 1e-6;
  const double span_y = std::min(8.0, std::max(0.0, h / 2.0 - margin_y));
  tr.y0 = h / 2.0 + rng.uniform(-span_y, span_y);
  if (tr.pattern == SynthPattern::kTranslateLeft || tr.pattern == SynthPattern::kTranslateRight) {
    const double room = std::max(0.0, w - 2.0 * margin_x - travel);
    const double start = margin_x + rng.uniform(0.0, room);
    tr.x0 = tr.pattern == SynthPattern::kTranslateRight ? start : w - start;
  } else {
    const double span_x = std::min(8.0, std::max(0.0, w / 2.0 - margin_x));
    tr.x0 = w / 2.0 + rng.uniform(-span_x, span_x);
  }
  if (tr.pattern == SynthPattern::kOscillateVertical) {
    // Keep the full swing on the sensor.
    tr.y0 = std::clamp(tr.y0, margin_y + cfg.amplitude, std::max(margin_y + cfg.amplitude,
                                                                  h - margin_y - cfg.amplitude));
  }
  return tr;
}

SynthBodyPose pose_at(const Trajectory& tr, const SynthConfig& cfg, Micros t) {
  const double s = static_cast<double>(t) * 1e-6;
  SynthBodyPose p{tr.x0, tr.y0, tr.ax, tr.ay};
  const double w = cfg.geometry.width;
  switch (tr.pattern) {
    case SynthPattern::kTranslateRight:
      p.cx = std::min(tr.x0 + tr.speed * s, w - tr.ax);
      break;
    case SynthPattern::kTranslateLeft:
      p.cx = std::max(tr.x0 - tr.speed * s, tr.ax);
      break;
    case SynthPattern::kOscillateVertical:
      p.cy = tr.y0 + cfg.amplitude * std::sin(kTwoPi * 0.5 * s + tr.phase[0]);
      break;
    case SynthPattern::kLocalJitter:
      p.cx += 0.5 * tr.jitter_amp *
              (std::sin(kTwoPi * tr.freq[0] * s + tr.phase[0]) +
               std::sin(kTwoPi * tr.freq[1] * s + tr.phase[1]));
      p.cy += 0.5 * tr.jitter_amp *
              (std::sin(kTwoPi * tr.freq[2] * s + tr.phase[2]) +
               std::sin(kTwoPi * tr.freq[3] * s + tr.phase[3]));
      break;
    case SynthPattern::kStaticWide:
    case SynthPattern::kStaticTall: {
      const double k = 1.0 + tr.breathe * std::sin(kTwoPi * 0.3 * s + tr.phase[0]);
      p.ax *= k;
      p.ay *= k;
      break;
    }
  }
  return p;
}

const double kLogBackground = std::log(kBackground);
const double kLogForeground = std::log(kForeground);

// Ellipse with a one-pixel linear edge ramp.
double log_intensity(const SynthBodyPose& b, double px, double py) {
  const double dx = (px - b.cx) / b.ax;
  const double dy = (py - b.cy) / b.ay;
  const double d = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(b.ax, b.ay);
  const double coverage = std::clamp(0.5 - d, 0.0, 1.0);
  if (coverage == 0.0) return kLogBackground;
  if (coverage == 1.0) return kLogForeground;
  return std::log(kBackground + (kForeground - kBackground) * coverage);
}

struct Box {
  int x0, y0, x1, y1;  // inclusive
};

Box footprint(const SynthBodyPose& b, const Geometry& g) {
  const int pad = 2;
  Box box{static_cast<int>(std::floor(b.cx - b.ax)) - pad, static_cast<int>(std::floor(b.cy - b.ay)) - pad,
          static_cast<int>(std::ceil(b.cx + b.ax)) + pad, static_cast<int>(std::ceil(b.cy + b.ay)) + pad};
  box.x0 = std::max(box.x0, 0);
  box.y0 = std::max(box.y0, 0);
  box.x1 = std::min(box.x1, static_cast<int>(g.width) - 1);
  box.y1 = std::min(box.y1, static_cast<int>(g.height) - 1);
  return box;
}

std::vector<Event> render_signal(const SynthConfig& cfg) {
  const Trajectory tr = make_trajectory(cfg);
  const Geometry& g = cfg.geometry;
  detail::SplitMix rng(cfg.seed ^ kSaltRender);

  // Reference log intensity per pixel, initialised to the first rendered frame.
  std::vector<double> ref(g.pixels(), kLogBackground);
  SynthBodyPose prev = pose_at(tr, cfg, 0);
  {
    const Box b = footprint(prev, g);
    for (int y = b.y0; y <= b.y1; ++y)
      for (int x = b.x0; x <= b.x1; ++x)
        ref[static_cast<std::size_t>(y) * g.width + x] = log_intensity(prev, x + 0.5, y + 0.5);
  }

  std::vector<Event> out;
  const double c = cfg.contrast_threshold;
  for (Micros t_prev = 0; t_prev < cfg.duration; t_prev += cfg.step) {
    const Micros t = std::min(t_prev + cfg.step, cfg.duration);
    const SynthBodyPose cur = pose_at(tr, cfg, t);
    const Box a = footprint(prev, g);
    const Box b = footprint(cur, g);
    const Box u{std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
    for (int y = u.y0; y <= u.y1; ++y) {
      for (int x = u.x0; x <= u.x1; ++x) {
        double& r = ref[static_cast<std::size_t>(y) * g.width + x];
        const double l = log_intensity(cur, x + 0.5, y + 0.5);
        while (l - r >= c || r - l >= c) {
          const bool up = l > r;
          r += up ? c : -c;
          // Crossing time somewhere inside the step.
          const auto dt = static_cast<Micros>(rng.below(static_cast<std::uint64_t>(t - t_prev)));
          out.push_back(Event{t_prev + 1 + dt, static_cast<std::uint16_t>(x),
                              static_cast<std::uint16_t>(y), static_cast<std::uint8_t>(up ? 1 : 0)});
        }
      }
    }
    prev = cur;
  }
  return out;
}

}  // namespace

std::string synth_class_name(int class_id) {
  switch (class_id) {
    case 0: return "translate_left";
    case 1: return "translate_right";
    case 2: return "oscillate_vertical";
    case 3: return "local_jitter";
    case 4: return "static_wide";
    case 5: return "static_tall";
  }
  throw ArgumentError("unknown synthetic class " + std::to_string(class_id));
}

bool synth_class_is_motion(int class_id) {
  if (class_id < 0 || class_id >= kSynthClassCount) {
    throw ArgumentError("unknown synthetic class " + std::to_string(class_id));
  }
  return class_id < 4;
}

void SynthConfig::validate() const {
  if (class_id < 0 || class_id >= kSynthClassCount)
    throw ValidationError("class_id must be in [0, " + std::to_string(kSynthClassCount) + ")");
  if (duration <= 0) throw ValidationError("duration must be positive");
  if (!(noise_rate >= 0.0) || !std::isfinite(noise_rate))
    throw ValidationError("noise_rate must be a finite value >= 0");
  if (geometry.height == 0 || geometry.width == 0 || geometry.height > 65536 || geometry.width > 65536)
    throw ValidationError("geometry must be within 1..65536 on each axis");
  if (!(speed >= 0.0)) throw ValidationError("speed must be >= 0");
  if (!(amplitude >= 0.0)) throw ValidationError("amplitude must be >= 0");
  if (!(body_radius > 0.0)) throw ValidationError("body_radius must be positive");
  if (!(contrast_threshold > 0.0)) throw ValidationError("contrast_threshold must be positive");
  if (step <= 0) throw ValidationError("step must be positive");
}

SynthBodyPose synth_body_pose(const SynthConfig& cfg, Micros t) {
  cfg.validate();
  return pose_at(make_trajectory(cfg), cfg, t);
}

Clip generate_clip(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Event> events = render_signal(cfg);

  const Geometry& g = cfg.geometry;
  detail::SplitMix rng(cfg.seed ^ kSaltNoise);
  const double mean = cfg.noise_rate * static_cast<double>(g.pixels()) *
                      static_cast<double>(cfg.duration) * 1e-6;
  const std::uint64_t n = rng.poisson(mean);
  events.reserve(events.size() + n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Event e;
    e.t = static_cast<Micros>(rng.below(static_cast<std::uint64_t>(cfg.duration)));
    e.x = static_cast<std::uint16_t>(rng.below(g.width));
    e.y = static_cast<std::uint16_t>(rng.below(g.height));
    e.p = static_cast<std::uint8_t>(rng.below(2));
    events.push_back(e);
  }
  // Full key sort keeps the output independent of generation order.
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    return a.p < b.p;
  });

  Clip clip;
  clip.stream = EventStream(g, std::move(events));
  clip.label = cfg.class_id;
  clip.subject_id = "seed" + std::to_string(cfg.seed);
  clip.config_id = "synth";
  return clip;
}

std::size_t count_signal_events(const SynthConfig& cfg) {
  cfg.validate();
  return render_signal(cfg).size();
}

std::uint64_t synth_clip_seed(const DatasetSpec& spec, bool test, int class_id, int index) {
  return spec.base_seed + (test ? 1'000'000ULL : 0ULL) + static_cast<std::uint64_t>(class_id) * 10'000ULL +
         static_cast<std::uint64_t>(index);
}

std::pair<std::filesystem::path, std::filesystem::path> generate_dataset(
    const DatasetSpec& spec, const std::filesystem::path& out_dir, int workers) {
  if (spec.classes < 1 || spec.classes > kSynthClassCount)
    throw ValidationError("classes must be in [1, " + std::to_string(kSynthClassCount) + "]");
  if (spec.train_per_class < 0 || spec.test_per_class < 0)
    throw ValidationError("clip counts must be >= 0");
  if (spec.train_per_class >= 10'000 || spec.test_per_class >= 10'000)
    throw ValidationError("at most 9999 clips per class and split");
  if (!(spec.test_noise_scale >= 0.0)) throw ValidationError("test_noise_scale must be >= 0");
  spec.base.validate();

  struct Job {
    bool test;
    int class_id;
    int index;
    std::filesystem::path path;
  };
  std::vector<Job> jobs;
  for (int split = 0; split < 2; ++split) {
    const bool test = split == 1;
    const int n = test ? spec.test_per_class : spec.train_per_class;
    const auto dir = out_dir / "clips" / (test ? "test" : "train");
    std::filesystem::create_directories(dir);
    for (int c = 0; c < spec.classes; ++c) {
      for (int i = 0; i < n; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04d.evs", synth_class_name(c).c_str(), i);
        jobs.push_back(Job{test, c, i, dir / name});
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        const Job& job = jobs[j];
        SynthConfig cfg = spec.base;
        cfg.class_id = job.class_id;
        cfg.seed = synth_clip_seed(spec, job.test, job.class_id, job.index);
        if (job.test) cfg.noise_rate *= spec.test_noise_scale;
        write_event_file(job.path, generate_clip(cfg).stream);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  Manifest train, test;
  for (int c = 0; c < spec.classes; ++c) {
    const ClassInfo info{synth_class_name(c), synth_class_is_motion(c)};
    train.classes.push_back(info);
    test.classes.push_back(info);
  }
  for (const Job& job : jobs) {
    ManifestEntry e{job.path, job.class_id,
                    "seed" + std::to_string(synth_clip_seed(spec, job.test, job.class_id, job.index)),
                    "synth"};
    (job.test ? test : train).entries.push_back(std::move(e));
  }
  const auto train_path = out_dir / "train.json";
  const auto test_path = out_dir / "test.json";
  write_manifest(train_path, train);
  write_manifest(test_path, test);
  return {train_path, test_path};
}

}  // namespace evact
