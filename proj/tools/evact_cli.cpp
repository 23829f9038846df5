#include "evact/blob_tracker.hpp"
#include "evact/errors.hpp"
#include "evact/event_io.hpp"
#include "evact/frame_io.hpp"
#include "evact/pipeline.hpp"
#include "evact/synthgen.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

namespace fs = std::filesystem;
using namespace evact;

namespace {

// Exit codes. Kept stable: scripts depend on them.
enum Exit : int {
  kOk = 0,
  kFailure = 1,       // anything not covered below
  kUsage = 2,         // unknown flag, missing required flag, stray argument
  kBadConfig = 3,     // flag or config-file value outside its valid range
  kMissingFile = 4,   // an input path does not exist
  kBadInput = 5,      // input file exists but is malformed
  kNumeric = 6,       // training diverged, factorization failed
  kIo = 7,            // read/write failure on an existing path
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RoiRect parse_roi(const std::string& text) {
  RoiRect r;
  if (std::sscanf(text.c_str(), "%u,%u,%u,%u", &r.x0, &r.y0, &r.x1, &r.y1) != 4) {
    throw ValidationError("--roi expects x0,y0,x1,y1, got '" + text + "'");
  }
  return r;
}

// Options shared by every stage that cleans a stream.
struct PreprocessFlags {
  std::string roi;
  Micros refractory{0};
  bool no_denoise{false};
  Micros denoise_tau{DenoiseParams{}.tau};
  int denoise_min_support{DenoiseParams{}.min_support};

  void add(CLI::App* app) {
    app->add_option("--roi", roi, "Crop to x0,y0,x1,y1 (half-open pixel rectangle)");
    app->add_option("--refractory-us", refractory, "Refractory window in microseconds; 0 disables")
        ->capture_default_str();
    app->add_flag("--no-denoise", no_denoise, "Skip the background-activity denoiser");
    app->add_option("--denoise-tau-us", denoise_tau, "Denoiser support window in microseconds")
        ->capture_default_str();
    app->add_option("--denoise-min-support", denoise_min_support,
                    "Neighbour events required to keep an event")
        ->capture_default_str();
  }

  PreprocessConfig build() const {
    PreprocessConfig c;
    if (!roi.empty()) c.roi = parse_roi(roi);
    if (refractory < 0) throw ValidationError("--refractory-us must be >= 0");
    if (denoise_tau <= 0) throw ValidationError("--denoise-tau-us must be positive");
    if (denoise_min_support < 1) throw ValidationError("--denoise-min-support must be >= 1");
    c.refractory = refractory;
    c.denoise = !no_denoise;
    c.denoise_params = DenoiseParams{denoise_tau, denoise_min_support};
    return c;
  }
};

struct FrameFlags {
  Micros dt{FrameParams{}.dt};
  Micros t_m{FrameParams{}.t_m};

  void add(CLI::App* app) {
    app->add_option("--dt-us", dt, "Frame period in microseconds")->capture_default_str();
    app->add_option("--tm-us", t_m, "Recency window in microseconds")->capture_default_str();
  }
  FrameParams build() const {
    if (dt <= 0) throw ValidationError("--dt-us must be positive");
    if (t_m <= 0) throw ValidationError("--tm-us must be positive");
    return FrameParams{dt, t_m};
  }
};

struct FeatureFlags {
  FrameFlags frames;
  float fill{0.0f};
  std::uint32_t downsample{FeaturizeConfig{}.downsample};
  std::uint32_t pool{FeaturizeConfig{}.pool};

  void add(CLI::App* app) {
    frames.add(app);
    app->add_option("--fill", fill, "Value for cells without events in the window")
        ->capture_default_str();
    app->add_option("--downsample", downsample, "Max-pool factor applied to each frame")
        ->capture_default_str();
    app->add_option("--pool", pool, "Max-pool factor applied before flattening")
        ->capture_default_str();
  }
  FeaturizeConfig build() const {
    if (downsample < 1) throw ValidationError("--downsample must be >= 1");
    if (pool < 1) throw ValidationError("--pool must be >= 1");
    if (!std::isfinite(fill)) throw ValidationError("--fill must be finite");
    FeaturizeConfig c;
    c.frames = frames.build();
    c.fill = fill;
    c.downsample = downsample;
    c.pool = pool;
    return c;
  }
};

struct TrainFlags {
  TrainConfig cfg;
  std::string weighting{"uniform"};

  void add(CLI::App* app) {
    app->add_option("--lr", cfg.learning_rate, "AdamW learning rate")->capture_default_str();
    app->add_option("--beta1", cfg.beta1, "AdamW first-moment decay")->capture_default_str();
    app->add_option("--beta2", cfg.beta2, "AdamW second-moment decay")->capture_default_str();
    app->add_option("--eps", cfg.epsilon, "AdamW epsilon")->capture_default_str();
    app->add_option("--weight-decay", cfg.weight_decay, "Decoupled weight decay")
        ->capture_default_str();
    app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size, "Minibatch size")->capture_default_str();
    app->add_option("--seed", cfg.seed, "Initialisation and shuffling seed")->capture_default_str();
    app->add_option("--class-weights", weighting, "uniform | balanced")->capture_default_str();
  }
  TrainConfig build() const {
    TrainConfig c = cfg;
    if (weighting == "uniform") {
      c.weighting = ClassWeighting::kUniform;
    } else if (weighting == "balanced") {
      c.weighting = ClassWeighting::kBalanced;
    } else {
      throw ValidationError("--class-weights must be uniform or balanced");
    }
    if (!(c.learning_rate > 0.0)) throw ValidationError("--lr must be positive");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
      throw ValidationError("--beta1/--beta2 must be in [0, 1)");
    if (!(c.epsilon > 0.0)) throw ValidationError("--eps must be positive");
    if (!(c.weight_decay >= 0.0)) throw ValidationError("--weight-decay must be >= 0");
    if (c.epochs < 1) throw ValidationError("--epochs must be >= 1");
    if (c.batch_size < 1) throw ValidationError("--batch-size must be >= 1");
    return c;
  }
};

struct MethodFlags {
  std::string method{"map"};
  int ensemble_size{32};
  double prior_precision{1.0};
  std::string covariance{"auto"};
  std::string predictive{"bridge"};

  void add(CLI::App* app) {
    app->add_option("--method", method, "map | laplace | ensemble | laplace-ensemble")
        ->capture_default_str();
    app->add_option("--ensemble-size", ensemble_size, "Ensemble members")->capture_default_str();
    app->add_option("--prior-precision", prior_precision, "Gaussian prior precision")
        ->capture_default_str();
    app->add_option("--covariance", covariance,
                    "auto | full | diagonal (auto: full up to 4096 parameters)")
        ->capture_default_str();
    app->add_option("--predictive", predictive, "Laplace predictive: bridge | probit | point")
        ->capture_default_str();
  }
  CalibrationSettings build(const TrainConfig& train, int workers) const {
    CalibrationSettings s;
    parse_calib_method(method);
    if (ensemble_size < 1) throw ValidationError("--ensemble-size must be >= 1");
    if (!(prior_precision > 0.0)) throw ValidationError("--prior-precision must be positive");
    s.train = train;
    s.ensemble_size = ensemble_size;
    s.base_seed = train.seed;
    s.laplace.prior_precision = prior_precision;
    if (covariance == "full") {
      s.laplace.mode = CovarianceMode::kFull;
    } else if (covariance == "diagonal") {
      s.laplace.mode = CovarianceMode::kDiagonal;
    } else if (covariance != "auto") {
      throw ValidationError("--covariance must be auto, full or diagonal");
    }
    s.ensemble_mode = parse_ensemble_mode(predictive);
    s.workers = workers;
    return s;
  }
};

struct FeatureSet {
  Manifest manifest;
  std::vector<FeatureSequence> sequences;
};

// Manifest of FTR1 files; labels come from the manifest.
FeatureSet load_feature_manifest(const fs::path& path, int workers) {
  FeatureSet fs_;
  fs_.manifest = read_manifest(path);
  fs_.sequences.resize(fs_.manifest.entries.size());
  parallel_for(fs_.sequences.size(), workers, [&](std::size_t i) {
    const ManifestEntry& e = fs_.manifest.entries[i];
    FeatureSequence s = read_features(e.path);
    if (s.label && static_cast<int>(*s.label) != e.label) {
      throw ValidationError(e.path.string() + ": label " + std::to_string(*s.label) +
                            " disagrees with manifest label " + std::to_string(e.label));
    }
    s.label = static_cast<std::uint32_t>(e.label);
    fs_.sequences[i] = std::move(s);
  });
  return fs_;
}

int num_classes(const FeatureSet& set) {
  if (!set.manifest.classes.empty()) return static_cast<int>(set.manifest.classes.size());
  int k = 0;
  for (const auto& e : set.manifest.entries) k = std::max(k, e.label + 1);
  return k;
}

std::vector<ClassInfo> class_list(const FeatureSet& set, int k) {
  if (!set.manifest.classes.empty()) return set.manifest.classes;
  std::vector<ClassInfo> out;
  for (int c = 0; c < k; ++c) out.push_back(ClassInfo{"class_" + std::to_string(c), true});
  return out;
}

void log(bool quiet, const std::string& line) {
  if (!quiet) std::cout << line << "\n";
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera action recognition pipeline with calibrated uncertainty"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a TOML/INI file; explicit flags win");
  int workers = default_workers();
  bool quiet = false;
  app.add_option("--workers", workers, "Worker threads for per-clip stages")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--quiet", quiet, "Suppress progress output");

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic clip dataset");
  DatasetSpec spec;
  fs::path synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", spec.classes, "Number of classes (1-6)")->capture_default_str();
  synth->add_option("--train-per-class", spec.train_per_class, "Training clips per class")
      ->capture_default_str();
  synth->add_option("--test-per-class", spec.test_per_class, "Test clips per class")
      ->capture_default_str();
  synth->add_option("--seed", spec.base_seed, "Base seed; splits use disjoint ranges above it")
      ->capture_default_str();
  synth->add_option("--duration-us", spec.base.duration, "Clip duration in microseconds")
      ->capture_default_str();
  synth->add_option("--height", spec.base.geometry.height, "Sensor rows")->capture_default_str();
  synth->add_option("--width", spec.base.geometry.width, "Sensor columns")->capture_default_str();
  synth->add_option("--noise-rate", spec.base.noise_rate, "Background events per pixel per second")
      ->capture_default_str();
  synth->add_option("--test-noise-scale", spec.test_noise_scale,
                    "Multiplier on --noise-rate for the test split")
      ->capture_default_str();
  synth->add_option("--speed", spec.base.speed, "Translation speed, px/s")->capture_default_str();
  synth->add_option("--amplitude", spec.base.amplitude, "Oscillation amplitude, px")
      ->capture_default_str();
  synth->add_option("--body-radius", spec.base.body_radius, "Body radius, px")->capture_default_str();
  synth->add_option("--contrast", spec.base.contrast_threshold, "Log-intensity step per event")
      ->capture_default_str();

  // ingest -----------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "Parse, validate and clean an event file");
  fs::path ingest_in, ingest_out;
  std::string ingest_format{"binary"};
  PreprocessFlags ingest_pre;
  bool ingest_raw = false;
  ingest->add_option("--in", ingest_in, "Input events (CSV or binary, detected)")->required();
  ingest->add_option("--out", ingest_out, "Output event file")->required();
  ingest->add_option("--format", ingest_format, "Output format: binary | csv")->capture_default_str();
  ingest->add_flag("--raw", ingest_raw, "Only convert; skip all cleaning");
  ingest_pre.add(ingest);

  // frames -----------------------------------------------------------------
  auto* frames = app.add_subcommand("frames", "Build recency event frames from an event file");
  fs::path frames_in, frames_out;
  FrameFlags frames_flags;
  float frames_fill = 0.0f;
  bool frames_keep_undefined = false;
  std::uint32_t frames_downsample = 1;
  frames->add_option("--in", frames_in, "Input event file")->required();
  frames->add_option("--out", frames_out, "Output frame file")->required();
  frames_flags.add(frames);
  frames->add_option("--fill", frames_fill, "Value for cells without events in the window")
      ->capture_default_str();
  frames->add_flag("--keep-undefined", frames_keep_undefined,
                   "Write empty cells as NaN instead of --fill");
  frames->add_option("--downsample", frames_downsample, "Max-pool factor")->capture_default_str();

  // voxel ------------------------------------------------------------------
  auto* voxel = app.add_subcommand("voxel", "Build a voxel grid from an event file");
  fs::path voxel_in, voxel_out;
  std::uint32_t voxel_bins = 5;
  voxel->add_option("--in", voxel_in, "Input event file")->required();
  voxel->add_option("--out", voxel_out, "Output frame file (one array, bins as channels)")
      ->required();
  voxel->add_option("--bins", voxel_bins, "Temporal bins")->capture_default_str();

  // blobs ------------------------------------------------------------------
  auto* blobs = app.add_subcommand("blobs", "Track blobs and write one feature row per blob");
  fs::path blobs_in, blobs_out, blobs_summary;
  BlobTrackerConfig blob_cfg;
  blobs->add_option("--in", blobs_in, "Input event file")->required();
  blobs->add_option("--out", blobs_out, "Output feature file")->required();
  blobs->add_option("--summary", blobs_summary, "Optional CSV with one line per blob");
  blobs->add_option("--alpha", blob_cfg.alpha, "Centre/radius smoothing")->capture_default_str();
  blobs->add_option("--r-min", blob_cfg.r_min, "Minimum radius, px")->capture_default_str();
  blobs->add_option("--samples", blob_cfg.n_samples, "History samples per blob")
      ->capture_default_str();
  blobs->add_option("--w-min", blob_cfg.w_min, "Retirement weight")->capture_default_str();
  blobs->add_option("--tau-us", blob_cfg.tau_w, "Weight decay time constant")->capture_default_str();

  // featurize --------------------------------------------------------------
  auto* featurize = app.add_subcommand("featurize", "Turn clips or frame files into feature files");
  fs::path feat_manifest, feat_out_dir, feat_frames, feat_out;
  PreprocessFlags feat_pre;
  FeatureFlags feat_flags;
  featurize->add_option("--manifest", feat_manifest, "Event-clip manifest to featurize");
  featurize->add_option("--out-dir", feat_out_dir,
                        "With --manifest: output directory (features.json + one file per clip)");
  featurize->add_option("--frames", feat_frames, "Single frame file to featurize");
  featurize->add_option("--out", feat_out, "With --frames: output feature file");
  feat_pre.add(featurize);
  feat_flags.add(featurize);

  // train ------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a classifier head (optionally Bayesian)");
  fs::path train_manifest, train_out, train_val, train_log;
  TrainFlags train_flags;
  MethodFlags train_method;
  train_cmd->add_option("--manifest", train_manifest, "Feature manifest")->required();
  train_cmd->add_option("--out", train_out, "Output model directory")->required();
  train_cmd->add_option("--val", train_val, "Optional validation feature manifest");
  train_cmd->add_option("--log", train_log, "Optional per-epoch CSV log (map only)");
  train_flags.add(train_cmd);
  train_method.add(train_cmd);

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Clip-level Acc@1 per class, Motion/Static and overall");
  fs::path eval_model, eval_manifest, eval_json_path, eval_csv_path, eval_pred;
  std::string eval_rule{"both"};
  eval->add_option("--model", eval_model, "Model directory from train")->required();
  eval->add_option("--manifest", eval_manifest, "Feature manifest to evaluate")->required();
  eval->add_option("--clip-rule", eval_rule, "mode | accum | both (columns shown)")
      ->capture_default_str();
  eval->add_option("--json", eval_json_path, "Write the report as JSON");
  eval->add_option("--csv", eval_csv_path, "Write the report as CSV");
  eval->add_option("--predictions", eval_pred, "Write per-clip predictions as CSV");

  // calibrate --------------------------------------------------------------
  auto* calibrate = app.add_subcommand("calibrate", "Calibration report (ACE/MCE + diagram)");
  fs::path cal_model, cal_train, cal_test, cal_out;
  std::size_t cal_bins = 10;
  TrainFlags cal_train_flags;
  MethodFlags cal_method;
  calibrate->add_option("--model", cal_model, "Trained model directory (skips fitting)");
  calibrate->add_option("--train", cal_train, "Feature manifest to fit --method on");
  calibrate->add_option("--test", cal_test, "Feature manifest to assess")->required();
  calibrate->add_option("--out", cal_out, "Output directory")->required();
  calibrate->add_option("--bins", cal_bins, "Reliability bins")->capture_default_str();
  cal_train_flags.add(calibrate);
  cal_method.add(calibrate);

  // report -----------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Summarise calibration reports in a directory");
  fs::path report_in, report_csv;
  report->add_option("--in", report_in, "Directory holding calib_*.json reports")->required();
  report->add_option("--csv", report_csv, "Summary CSV (default: <in>/summary.csv)");

  // bench ------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "Measure build_frames throughput (events/s)");
  fs::path bench_in;
  std::size_t bench_events = 2'000'000;
  int bench_repeat = 3;
  std::uint64_t bench_seed = 7;
  FrameFlags bench_frames;
  bool bench_json = false;
  bench->add_option("--in", bench_in, "Event file (default: uniform random stream)");
  bench->add_option("--events", bench_events, "Random stream length")->capture_default_str();
  bench->add_option("--repeat", bench_repeat, "Timed repetitions (best is reported)")
      ->capture_default_str();
  bench->add_option("--seed", bench_seed, "Random stream seed")->capture_default_str();
  bench->add_flag("--json", bench_json, "Print a JSON line instead of text");
  bench_frames.add(bench);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    app.exit(e);
    return kMissingFile;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const bool value_error = dynamic_cast<const CLI::ValidationError*>(&e) ||
                             dynamic_cast<const CLI::ConversionError*>(&e) ||
                             dynamic_cast<const CLI::ConfigError*>(&e);
    return value_error ? kBadConfig : kUsage;
  }

  auto fail = [](const char* kind, int code, const std::string& what) {
    nlohmann::ordered_json j;
    j["error"] = kind;
    j["exit_code"] = code;
    j["message"] = what;
    std::cerr << j.dump() << "\n";
    return code;
  };

  try {
    if (*synth) {
      spec.base.validate();
      const auto [train_path, test_path] = generate_dataset(spec, synth_out, workers);
      log(quiet, "wrote " + train_path.string() + " and " + test_path.string());
    } else if (*ingest) {
      const PreprocessConfig pre = ingest_pre.build();
      EventFormat fmt_out;
      if (ingest_format == "binary") {
        fmt_out = EventFormat::kBinary;
      } else if (ingest_format == "csv") {
        fmt_out = EventFormat::kCsv;
      } else {
        throw ValidationError("--format must be binary or csv");
      }
      const EventStream in = read_event_file(ingest_in);
      if (pre.roi && !pre.roi->valid_for(in.geometry())) {
        throw ValidationError("--roi does not fit the " + std::to_string(in.geometry().width) + "x" +
                              std::to_string(in.geometry().height) + " sensor");
      }
      const EventStream out = ingest_raw ? in : preprocess(in, pre);
      write_event_file(ingest_out, out, fmt_out);
      log(quiet, "events in " + std::to_string(in.size()) + ", out " + std::to_string(out.size()));
    } else if (*frames) {
      const FrameParams params = frames_flags.build();
      if (frames_downsample < 1) throw ValidationError("--downsample must be >= 1");
      if (frames_keep_undefined && frames_downsample > 1) {
        throw ValidationError("--keep-undefined cannot be combined with --downsample");
      }
      const EventStream stream = read_event_file(frames_in);
      if (stream.empty()) throw ValidationError("event stream is empty");
      const std::vector<EventFrame> built = build_frames(stream, params);
      FrameFile file;
      if (frames_downsample == 1) {
        file = to_frame_file(built, stream.t_begin(), params,
                             frames_keep_undefined ? std::nullopt : std::optional<float>(frames_fill));
      } else {
        file.t0 = stream.t_begin();
        file.dt = params.dt;
        file.t_m = params.t_m;
        for (const EventFrame& f : built) {
          file.frames.push_back(downsample(fill_undefined(f, frames_fill), frames_downsample));
        }
      }
      write_frame_file(frames_out, file);
      log(quiet, "frames " + std::to_string(file.frames.size()));
    } else if (*voxel) {
      if (voxel_bins < 1) throw ValidationError("--bins must be >= 1");
      const VoxelGrid grid = build_voxel_grid(read_event_file(voxel_in), voxel_bins);
      write_frame_file(voxel_out, to_frame_file(grid));
      log(quiet, "voxel grid " + std::to_string(grid.geometry.height) + "x" +
                     std::to_string(grid.geometry.width) + "x" + std::to_string(grid.bins));
    } else if (*blobs) {
      blob_cfg.validate();
      const std::vector<BlobState> tracked = track(read_event_file(blobs_in), blob_cfg);
      FeatureSequence seq;
      seq.dim = 5 * blob_cfg.n_samples;
      seq.clip_id = blobs_in.stem().string();
      std::string summary = "id,birth_us,retired_us,events,cx,cy,rx,ry,w\n";
      for (const BlobState& b : tracked) {
        seq.append(extract_features(b, blob_cfg));
        summary += std::to_string(b.id) + "," + std::to_string(b.birth) + "," +
                   std::to_string(b.retired) + "," + std::to_string(b.events) + "," +
                   fmt("%.4f", b.cx) + "," + fmt("%.4f", b.cy) + "," + fmt("%.4f", b.rx) + "," +
                   fmt("%.4f", b.ry) + "," + fmt("%.6f", b.w) + "\n";
      }
      write_features(blobs_out, seq);
      if (!blobs_summary.empty()) write_text(blobs_summary, summary);
      log(quiet, "blobs " + std::to_string(tracked.size()));
    } else if (*featurize) {
      const FeaturizeConfig feat = feat_flags.build();
      if (!feat_manifest.empty() == !feat_frames.empty()) {
        throw ValidationError("featurize needs exactly one of --manifest or --frames");
      }
      if (!feat_manifest.empty()) {
        if (feat_out_dir.empty()) throw ValidationError("--manifest requires --out-dir");
        const PreprocessConfig pre = feat_pre.build();
        const Manifest m = read_manifest(feat_manifest);
        for (const ManifestEntry& e : m.entries) {
          if (!fs::exists(e.path)) throw MissingFileError("no such file: " + e.path.string());
        }
        fs::create_directories(feat_out_dir);
        Manifest out;
        out.classes = m.classes;
        out.entries.resize(m.entries.size());
        parallel_for(m.entries.size(), workers, [&](std::size_t i) {
          const ManifestEntry& e = m.entries[i];
          // Index prefix keeps names unique when clips share a stem.
          char prefix[16];
          std::snprintf(prefix, sizeof(prefix), "%05zu_", i);
          const std::string id = prefix + e.path.stem().string();
          FeatureSequence s = clip_features(read_event_file(e.path), pre, feat, id,
                                            static_cast<std::uint32_t>(e.label));
          const fs::path path = feat_out_dir / (id + ".ftr");
          write_features(path, s);
          out.entries[i] = ManifestEntry{path, e.label, e.subject_id, e.config_id};
        });
        write_manifest(feat_out_dir / "features.json", out);
        log(quiet, "featurized " + std::to_string(m.entries.size()) + " clips into " +
                       (feat_out_dir / "features.json").string());
      } else {
        if (feat_out.empty()) throw ValidationError("--frames requires --out");
        const FrameFile file = read_frame_file(feat_frames);
        const FeatureSequence s = frames_to_features(file.frames, feat.pool, feat_frames.stem().string());
        write_features(feat_out, s);
        log(quiet, "features " + std::to_string(s.count()) + " x " + std::to_string(s.dim));
      }
    } else if (*train_cmd) {
      const TrainConfig tc = train_flags.build();
      const CalibrationSettings settings = train_method.build(tc, workers);
      const CalibMethod method = parse_calib_method(train_method.method);
      const FeatureSet set = load_feature_manifest(train_manifest, workers);
      const int k = num_classes(set);
      const Dataset data = make_dataset(set.sequences, k);
      std::optional<FeatureSet> val;
      if (!train_val.empty()) val = load_feature_manifest(train_val, workers);

      MethodModel model;
      if (method == CalibMethod::kMap || method == CalibMethod::kLaplace) {
        std::vector<EpochLog> epochs;
        std::optional<Dataset> val_data;
        if (val) val_data = make_dataset(val->sequences, k);
        model.method = CalibMethod::kMap;
        model.head = train(data, tc, &epochs, val_data ? &*val_data : nullptr);
        if (method == CalibMethod::kLaplace) model = with_laplace(model, data, settings);
        if (!train_log.empty()) write_text(train_log, training_log_csv(epochs));
        if (!epochs.empty()) {
          log(quiet, "final loss " + fmt("%.6f", epochs.back().loss) + ", train acc " +
                         fmt("%.4f", epochs.back().train_acc));
        }
      } else {
        model = fit_method(CalibMethod::kEnsemble, data, settings);
        if (method == CalibMethod::kLaplaceEnsemble) model = with_laplace(model, data, settings);
      }
      model.ensemble_mode = settings.ensemble_mode;
      save_method_model(train_out, model);
      log(quiet, "saved " + calib_method_name(model.method) + " model to " + train_out.string());
    } else if (*eval) {
      if (eval_rule != "mode" && eval_rule != "accum" && eval_rule != "both") {
        throw ValidationError("--clip-rule must be mode, accum or both");
      }
      const MethodModel model = load_method_model(eval_model);
      const FeatureSet set = load_feature_manifest(eval_manifest, workers);
      const int k = num_classes(set);
      const MethodResult r = assess_method(model, set.sequences, class_list(set, k), 10, workers);
      const std::string table = eval_table(r.eval, eval_rule != "accum", eval_rule != "mode");
      std::cout << table;
      if (!eval_json_path.empty()) write_text(eval_json_path, eval_json(r.eval));
      if (!eval_csv_path.empty()) write_text(eval_csv_path, eval_csv(r.eval));
      if (!eval_pred.empty()) {
        std::string csv = "clip_id,label,pred_mode,pred_prob,frames\n";
        for (const FeatureSequence& s : set.sequences) {
          int pm = 0, pa = 0;
          if (s.count() > 0) {
            const Eigen::MatrixXd p = model.predict_frames(s);
            pm = clip_label_mode(p);
            pa = clip_label_accumulated(p);
          }
          csv += s.clip_id + "," + std::to_string(*s.label) + "," + std::to_string(pm) + "," +
                 std::to_string(pa) + "," + std::to_string(s.count()) + "\n";
        }
        write_text(eval_pred, csv);
      }
    } else if (*calibrate) {
      if (cal_bins < 1) throw ValidationError("--bins must be >= 1");
      if (cal_model.empty() == cal_train.empty()) {
        throw ValidationError("calibrate needs exactly one of --model or --train");
      }
      const TrainConfig tc = cal_train_flags.build();
      const CalibrationSettings settings = cal_method.build(tc, workers);
      const FeatureSet test = load_feature_manifest(cal_test, workers);
      MethodModel model;
      if (!cal_model.empty()) {
        model = load_method_model(cal_model);
      } else {
        const CalibMethod method = parse_calib_method(cal_method.method);
        const FeatureSet tr = load_feature_manifest(cal_train, workers);
        const Dataset data = make_dataset(tr.sequences, num_classes(tr));
        if (method == CalibMethod::kLaplace || method == CalibMethod::kLaplaceEnsemble) {
          const CalibMethod base =
              method == CalibMethod::kLaplace ? CalibMethod::kMap : CalibMethod::kEnsemble;
          model = with_laplace(fit_method(base, data, settings), data, settings);
        } else {
          model = fit_method(method, data, settings);
        }
      }
      const int k = num_classes(test);
      const MethodResult r = assess_method(model, test.sequences, class_list(test, k), cal_bins, workers);
      const std::string name = calib_method_name(model.method);
      fs::create_directories(cal_out);
      const fs::path stem = cal_out / ("diagram_" + name);
      render_diagram(r.report.diagram, stem, name);
      auto j = nlohmann::ordered_json::parse(
          report_json(r.report, stem.filename().string() + ".svg", name));
      j["acc1_mode"] = r.eval.overall_mode;
      j["acc1_prob"] = r.eval.overall_accumulated;
      write_text(cal_out / ("calib_" + name + ".json"), j.dump(2) + "\n");
      std::cout << name << "  ACE " << fmt("%.4f", r.report.ace) << "  MCE "
                << fmt("%.4f", r.report.mce) << "  Acc@1 mode " << fmt("%.3f", r.eval.overall_mode)
                << "  prob " << fmt("%.3f", r.eval.overall_accumulated) << "\n";
    } else if (*report) {
      if (!fs::is_directory(report_in)) throw MissingFileError("no such directory: " + report_in.string());
      std::vector<nlohmann::json> rows;
      for (CalibMethod m : {CalibMethod::kMap, CalibMethod::kLaplace, CalibMethod::kEnsemble,
                            CalibMethod::kLaplaceEnsemble}) {
        const fs::path p = report_in / ("calib_" + calib_method_name(m) + ".json");
        if (!fs::exists(p)) continue;
        try {
          rows.push_back(nlohmann::json::parse(read_text(p)));
        } catch (const nlohmann::json::exception& e) {
          throw ParseError(p.string() + ": " + e.what(), 0);
        }
      }
      if (rows.empty()) throw MissingFileError("no calib_*.json reports in " + report_in.string());
      std::string csv = "method,acc1_mode,acc1_prob,ace,mce\n";
      std::cout << "method              Mode   Prob.    ACE    MCE\n";
      for (const auto& r : rows) {
        const std::string method = r.at("method").get<std::string>();
        const double mode = r.value("acc1_mode", std::nan(""));
        const double prob = r.value("acc1_prob", std::nan(""));
        const double a = r.at("ace").get<double>();
        const double m = r.at("mce").get<double>();
        std::string name = method;
        name.resize(18, ' ');
        std::cout << name << fmt("%6.3f", mode) << "  " << fmt("%6.3f", prob) << "  "
                  << fmt("%5.3f", a) << "  " << fmt("%5.3f", m) << "\n";
        csv += method + "," + fmt("%.6f", mode) + "," + fmt("%.6f", prob) + "," + fmt("%.6f", a) +
               "," + fmt("%.6f", m) + "\n";
      }
      write_text(report_csv.empty() ? report_in / "summary.csv" : report_csv, csv);
    } else if (*bench) {
      const FrameParams params = bench_frames.build();
      if (bench_repeat < 1) throw ValidationError("--repeat must be >= 1");
      EventStream stream;
      if (!bench_in.empty()) {
        stream = read_event_file(bench_in);
      } else {
        if (bench_events < 2) throw ValidationError("--events must be >= 2");
        SynthConfig c;
        c.class_id = 0;
        c.seed = bench_seed;
        // Uniform noise-only stream sized to the requested count.
        c.noise_rate = static_cast<double>(bench_events) /
                       (static_cast<double>(c.geometry.pixels()) * static_cast<double>(c.duration) * 1e-6);
        c.contrast_threshold = 1e9;  // suppress the body so only noise is emitted
        stream = generate_clip(c).stream;
      }
      double best = std::numeric_limits<double>::infinity();
      std::size_t frames_built = 0;
      for (int i = 0; i < bench_repeat; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto f = build_frames(stream, params);
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        frames_built = f.size();
        best = std::min(best, s);
      }
      const double rate = static_cast<double>(stream.size()) / best;
      if (bench_json) {
        nlohmann::ordered_json j;
        j["events"] = stream.size();
        j["frames"] = frames_built;
        j["seconds"] = best;
        j["events_per_second"] = rate;
        std::cout << j.dump() << "\n";
      } else {
        std::cout << "build_frames: " << stream.size() << " events, " << frames_built << " frames, "
                  << fmt("%.4f", best) << " s, " << fmt("%.0f", rate) << " events/s\n";
      }
    }
  } catch (const MissingFileError& e) {
    return fail("missing_file", kMissingFile, e.what());
  } catch (const ParseError& e) {
    return fail("malformed_input", kBadInput, e.what());
  } catch (const ValidationError& e) {
    return fail("invalid_config", kBadConfig, e.what());
  } catch (const ArgumentError& e) {
    return fail("invalid_config", kBadConfig, e.what());
  } catch (const NumericError& e) {
    return fail("numeric", kNumeric, e.what());
  } catch (const IoError& e) {
    return fail("io", kIo, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", kIo, e.what());
  } catch (const std::exception& e) {
    return fail("failure", kFailure, e.what());
  }
  return kOk;
}
