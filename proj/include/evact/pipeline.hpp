#pragma once

// Glue between the stage modules: turning clips into feature sequences,
// clip-level evaluation and per-method calibration. Shared by the command
// line tool and the acceptance suite.

#include "evact/bayesian.hpp"
#include "evact/calibration.hpp"
#include "evact/classifier.hpp"
#include "evact/event.hpp"
#include "evact/features.hpp"
#include "evact/manifest.hpp"
#include "evact/preprocess.hpp"
#include "evact/representations.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace evact {

struct PreprocessConfig {
  std::optional<RoiRect> roi;
  Micros refractory{0};  // 0 disables the filter
  bool denoise{true};
  DenoiseParams denoise_params;
};

EventStream preprocess(const EventStream& stream, const PreprocessConfig& cfg);

struct FeaturizeConfig {
  FrameParams frames;
  float fill{0.0f};            // value for cells with no event in the window
  std::uint32_t downsample{2}; // max-pool applied to each frame
  std::uint32_t pool{5};       // further max-pool before flattening
};

// Frames built from a stream, with undefined cells filled and the first
// downsampling applied. These are what `frames` writes to disk.
std::vector<DenseArray> clip_frames(const EventStream& stream, const FeaturizeConfig& cfg);

FeatureSequence clip_features(const EventStream& stream, const PreprocessConfig& pre,
                              const FeaturizeConfig& feat, std::string clip_id,
                              std::optional<std::uint32_t> label);

// Reads and featurizes every clip of a manifest; output order follows the
// manifest regardless of worker count.
std::vector<FeatureSequence> featurize_manifest(const Manifest& manifest,
                                                const PreprocessConfig& pre,
                                                const FeaturizeConfig& feat, int workers);

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// is rethrown after all threads stop.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

int default_workers();

enum class ClipRule { kMode, kAccumulated };

int apply_clip_rule(const Eigen::MatrixXd& frame_probs, ClipRule rule);

// Clip-level Acc@1 per class, averaged over classes for the Motion, Static
// and overall aggregates. A class with no clips is excluded from averages.
struct ClassAccuracy {
  std::string name;
  bool motion{true};
  std::size_t clips{0};
  double mode{0.0};
  double accumulated{0.0};
};

struct EvalReport {
  std::vector<ClassAccuracy> classes;
  double motion_mode{0.0}, motion_accumulated{0.0};
  double static_mode{0.0}, static_accumulated{0.0};
  double overall_mode{0.0}, overall_accumulated{0.0};
  std::size_t clips{0};
  std::size_t empty_clips{0};  // clips with no frames, predicted as class 0
};

// `frame_probs[i]` is the N_i x K per-frame probability matrix of clip i.
EvalReport evaluate_clips(std::span<const Eigen::MatrixXd> frame_probs, std::span<const int> labels,
                          const std::vector<ClassInfo>& classes);

// Human-readable table; either clip-rule column can be left out.
std::string eval_table(const EvalReport& report, bool show_mode = true, bool show_prob = true);
std::string eval_json(const EvalReport& report);
std::string eval_csv(const EvalReport& report);

enum class CalibMethod { kMap, kLaplace, kEnsemble, kLaplaceEnsemble };

std::string calib_method_name(CalibMethod m);
CalibMethod parse_calib_method(const std::string& name);

struct CalibrationSettings {
  TrainConfig train;
  LaplaceConfig laplace;
  int ensemble_size{32};
  std::uint64_t base_seed{0};
  EnsembleMode ensemble_mode{EnsembleMode::kBridge};  // for laplace-ensemble
  int workers{1};
};

// A fitted predictor for one calibration method.
struct MethodModel {
  CalibMethod method{CalibMethod::kMap};
  SoftmaxHead head;                            // map
  std::optional<GaussianPosterior> posterior;  // laplace
  Ensemble ensemble;                           // ensemble variants
  EnsembleMode ensemble_mode{EnsembleMode::kPoint};

  Eigen::MatrixXd predict_frames(const FeatureSequence& seq) const;
};

MethodModel fit_method(CalibMethod method, const Dataset& train, const CalibrationSettings& cfg);

// Laplace variant of an already fitted point model: map becomes laplace and
// ensemble becomes laplace-ensemble around the same members.
MethodModel with_laplace(const MethodModel& point, const Dataset& train,
                         const CalibrationSettings& cfg);

// Model directory: model.json names the method, next to model.smh (map),
// posterior.lap (laplace) or ensemble/ (ensemble variants).
void save_method_model(const std::filesystem::path& dir, const MethodModel& model);
MethodModel load_method_model(const std::filesystem::path& dir);

std::string ensemble_mode_name(EnsembleMode m);
EnsembleMode parse_ensemble_mode(const std::string& name);

// Per-frame predictions of every test clip pooled into one diagram.
struct MethodResult {
  CalibMethod method{CalibMethod::kMap};
  CalibrationReport report;
  EvalReport eval;
};

MethodResult assess_method(const MethodModel& model, std::span<const FeatureSequence> test,
                           const std::vector<ClassInfo>& classes, std::size_t bins = 10,
                           int workers = 1);

}  // namespace evact
