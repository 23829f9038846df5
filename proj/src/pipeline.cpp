#include "evact/pipeline.hpp"

#include "evact/errors.hpp"
#include "evact/event_io.hpp"
#include "binary_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace evact {

EventStream preprocess(const EventStream& stream, const PreprocessConfig& cfg) {
  EventStream out = stream;
  if (cfg.roi) out = crop_roi(out, *cfg.roi);
  if (cfg.refractory > 0) out = refractory_filter(out, cfg.refractory);
  if (cfg.denoise) out = time_surface_denoise(out, cfg.denoise_params);
  return out;
}

std::vector<DenseArray> clip_frames(const EventStream& stream, const FeaturizeConfig& cfg) {
  if (cfg.downsample < 1 || cfg.pool < 1) throw ArgumentError("pooling factors must be >= 1");
  std::vector<DenseArray> out;
  for_each_frame(stream, cfg.frames, [&](const EventFrame& f) {
    DenseArray filled = fill_undefined(f, cfg.fill);
    out.push_back(cfg.downsample == 1 ? std::move(filled) : downsample(filled, cfg.downsample));
  });
  return out;
}

FeatureSequence clip_features(const EventStream& stream, const PreprocessConfig& pre,
                              const FeaturizeConfig& feat, std::string clip_id,
                              std::optional<std::uint32_t> label) {
  const EventStream clean = preprocess(stream, pre);
  return frames_to_features(clip_frames(clean, feat), feat.pool, std::move(clip_id), label);
}

int default_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<FeatureSequence> featurize_manifest(const Manifest& manifest,
                                                const PreprocessConfig& pre,
                                                const FeaturizeConfig& feat, int workers) {
  std::vector<FeatureSequence> out(manifest.entries.size());
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    out[i] = clip_features(read_event_file(e.path), pre, feat, e.path.stem().string(),
                           static_cast<std::uint32_t>(e.label));
  });
  return out;
}

int apply_clip_rule(const Eigen::MatrixXd& frame_probs, ClipRule rule) {
  return rule == ClipRule::kMode ? clip_label_mode(frame_probs) : clip_label_accumulated(frame_probs);
}

EvalReport evaluate_clips(std::span<const Eigen::MatrixXd> frame_probs, std::span<const int> labels,
                          const std::vector<ClassInfo>& classes) {
  if (frame_probs.size() != labels.size()) throw ArgumentError("prediction/label count mismatch");
  if (classes.empty()) throw ArgumentError("no classes");
  const std::size_t k = classes.size();
  std::vector<std::size_t> hits_mode(k, 0), hits_acc(k, 0);
  EvalReport r;
  r.classes.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    r.classes[c].name = classes[c].name;
    r.classes[c].motion = classes[c].motion;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw ArgumentError("label out of range");
    ++r.classes[static_cast<std::size_t>(y)].clips;
    int pm = 0, pa = 0;
    if (frame_probs[i].rows() == 0) {
      ++r.empty_clips;
    } else {
      pm = clip_label_mode(frame_probs[i]);
      pa = clip_label_accumulated(frame_probs[i]);
    }
    hits_mode[static_cast<std::size_t>(y)] += pm == y;
    hits_acc[static_cast<std::size_t>(y)] += pa == y;
  }
  r.clips = labels.size();

  struct Avg {
    double mode{0}, acc{0};
    std::size_t n{0};
  } motion, stat, all;
  for (std::size_t c = 0; c < k; ++c) {
    ClassAccuracy& ca = r.classes[c];
    if (ca.clips == 0) continue;
    ca.mode = static_cast<double>(hits_mode[c]) / static_cast<double>(ca.clips);
    ca.accumulated = static_cast<double>(hits_acc[c]) / static_cast<double>(ca.clips);
    for (Avg* a : {ca.motion ? &motion : &stat, &all}) {
      a->mode += ca.mode;
      a->acc += ca.accumulated;
      ++a->n;
    }
  }
  auto finish = [](const Avg& a, double& mode, double& acc) {
    mode = a.n ? a.mode / static_cast<double>(a.n) : std::nan("");
    acc = a.n ? a.acc / static_cast<double>(a.n) : std::nan("");
  };
  finish(motion, r.motion_mode, r.motion_accumulated);
  finish(stat, r.static_mode, r.static_accumulated);
  finish(all, r.overall_mode, r.overall_accumulated);
  return r;
}

namespace {

std::string pct(double v) {
  if (std::isnan(v)) return "     -";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%6.3f", v);
  return buf;
}

nlohmann::ordered_json num(double v) {
  return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

}  // namespace

std::string eval_table(const EvalReport& r, bool show_mode, bool show_prob) {
  std::size_t w = 8;
  for (const auto& c : r.classes) w = std::max(w, c.name.size());
  auto pad = [&](std::string s) {
    s.resize(w, ' ');
    return s;
  };
  auto cols = [&](double mode, double prob) {
    std::string s;
    if (show_mode) s += "  " + pct(mode);
    if (show_prob) s += "  " + pct(prob);
    return s + "\n";
  };
  const std::string rule(w + 16 + (show_mode ? 8 : 0) + (show_prob ? 8 : 0), '-');
  std::string out = pad("label") + "  type    clips";
  if (show_mode) out += "    Mode";
  if (show_prob) out += "   Prob.";
  out += "\n" + rule + "\n";
  for (const auto& c : r.classes) {
    char clips[16];
    std::snprintf(clips, sizeof(clips), "%5zu", c.clips);
    out += pad(c.name) + "  " + (c.motion ? "motion" : "static") + "  " + clips +
           cols(c.clips ? c.mode : std::nan(""), c.clips ? c.accumulated : std::nan(""));
  }
  out += rule + "\n";
  const std::string blank(15, ' ');
  out += pad("Motion") + blank + cols(r.motion_mode, r.motion_accumulated);
  out += pad("Static") + blank + cols(r.static_mode, r.static_accumulated);
  out += pad("Overall") + blank + cols(r.overall_mode, r.overall_accumulated);
  return out;
}

std::string eval_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["clips"] = r.clips;
  j["empty_clips"] = r.empty_clips;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : r.classes) {
    j["classes"].push_back({{"name", c.name},
                            {"motion", c.motion},
                            {"clips", c.clips},
                            {"acc1_mode", num(c.clips ? c.mode : std::nan(""))},
                            {"acc1_prob", num(c.clips ? c.accumulated : std::nan(""))}});
  }
  j["motion"] = {{"acc1_mode", num(r.motion_mode)}, {"acc1_prob", num(r.motion_accumulated)}};
  j["static"] = {{"acc1_mode", num(r.static_mode)}, {"acc1_prob", num(r.static_accumulated)}};
  j["overall"] = {{"acc1_mode", num(r.overall_mode)}, {"acc1_prob", num(r.overall_accumulated)}};
  return j.dump(2) + "\n";
}

std::string eval_csv(const EvalReport& r) {
  std::string out = "group,type,clips,acc1_mode,acc1_prob\n";
  auto field = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& c : r.classes) {
    out += c.name + "," + (c.motion ? "motion" : "static") + "," + std::to_string(c.clips) + "," +
           field(c.clips ? c.mode : std::nan("")) + "," + field(c.clips ? c.accumulated : std::nan("")) +
           "\n";
  }
  out += "Motion,aggregate,," + field(r.motion_mode) + "," + field(r.motion_accumulated) + "\n";
  out += "Static,aggregate,," + field(r.static_mode) + "," + field(r.static_accumulated) + "\n";
  out += "Overall,aggregate," + std::to_string(r.clips) + "," + field(r.overall_mode) + "," +
         field(r.overall_accumulated) + "\n";
  return out;
}

std::string calib_method_name(CalibMethod m) {
  switch (m) {
    case CalibMethod::kMap: return "map";
    case CalibMethod::kLaplace: return "laplace";
    case CalibMethod::kEnsemble: return "ensemble";
    case CalibMethod::kLaplaceEnsemble: return "laplace-ensemble";
  }
  return "?";
}

CalibMethod parse_calib_method(const std::string& name) {
  for (CalibMethod m : {CalibMethod::kMap, CalibMethod::kLaplace, CalibMethod::kEnsemble,
                        CalibMethod::kLaplaceEnsemble}) {
    if (calib_method_name(m) == name) return m;
  }
  throw ArgumentError("unknown calibration method '" + name + "'");
}

Eigen::MatrixXd MethodModel::predict_frames(const FeatureSequence& seq) const {
  switch (method) {
    case CalibMethod::kMap:
      return evact::predict_frames(head, seq);
    case CalibMethod::kLaplace: {
      if (!posterior) throw ArgumentError("laplace model without a posterior");
      if (ensemble_mode == EnsembleMode::kPoint) return evact::predict_frames(posterior->map, seq);
      if (ensemble_mode == EnsembleMode::kBridge) return laplace_predict_frames(*posterior, seq);
      Eigen::MatrixXd out(static_cast<Eigen::Index>(seq.count()), posterior->map.num_classes);
      for (std::size_t i = 0; i < seq.count(); ++i) {
        const LogitGaussian lg = logit_gaussian(*posterior, seq.row(i));
        out.row(static_cast<Eigen::Index>(i)) = probit_predictive(lg.mu, lg.var).transpose();
      }
      return out;
    }
    case CalibMethod::kEnsemble:
      return ensemble_predict_frames(ensemble, seq, EnsembleMode::kPoint);
    case CalibMethod::kLaplaceEnsemble:
      return ensemble_predict_frames(ensemble, seq, ensemble_mode);
  }
  throw ArgumentError("unknown calibration method");
}

MethodModel fit_method(CalibMethod method, const Dataset& train_set, const CalibrationSettings& cfg) {
  MethodModel m;
  m.method = method;
  m.ensemble_mode = cfg.ensemble_mode;
  TrainConfig tc = cfg.train;
  tc.seed = cfg.base_seed;
  switch (method) {
    case CalibMethod::kMap:
      m.head = train(train_set, tc);
      break;
    case CalibMethod::kLaplace:
      m.head = train(train_set, tc);
      m.posterior = fit_laplace(m.head, train_set, cfg.laplace);
      break;
    case CalibMethod::kEnsemble:
      m.ensemble = train_ensemble(train_set, cfg.train, cfg.ensemble_size, cfg.base_seed, std::nullopt,
                                  cfg.workers);
      break;
    case CalibMethod::kLaplaceEnsemble:
      m.ensemble = train_ensemble(train_set, cfg.train, cfg.ensemble_size, cfg.base_seed, cfg.laplace,
                                  cfg.workers);
      break;
  }
  return m;
}

MethodModel with_laplace(const MethodModel& point, const Dataset& train_set,
                         const CalibrationSettings& cfg) {
  MethodModel m = point;
  m.ensemble_mode = cfg.ensemble_mode;
  if (point.method == CalibMethod::kMap) {
    m.method = CalibMethod::kLaplace;
    m.posterior = fit_laplace(point.head, train_set, cfg.laplace);
  } else if (point.method == CalibMethod::kEnsemble) {
    m.method = CalibMethod::kLaplaceEnsemble;
    m.ensemble.posteriors.assign(point.ensemble.members.size(), GaussianPosterior{});
    parallel_for(point.ensemble.members.size(), cfg.workers, [&](std::size_t i) {
      m.ensemble.posteriors[i] = fit_laplace(point.ensemble.members[i], train_set, cfg.laplace);
    });
  } else {
    throw ArgumentError("with_laplace needs a map or ensemble model");
  }
  return m;
}

std::string ensemble_mode_name(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::kPoint: return "point";
    case EnsembleMode::kBridge: return "bridge";
    case EnsembleMode::kProbit: return "probit";
  }
  return "?";
}

EnsembleMode parse_ensemble_mode(const std::string& name) {
  for (EnsembleMode m : {EnsembleMode::kPoint, EnsembleMode::kBridge, EnsembleMode::kProbit}) {
    if (ensemble_mode_name(m) == name) return m;
  }
  throw ArgumentError("unknown predictive mode '" + name + "'");
}

void save_method_model(const std::filesystem::path& dir, const MethodModel& model) {
  std::filesystem::create_directories(dir);
  switch (model.method) {
    case CalibMethod::kMap:
      write_head(dir / "model.smh", model.head);
      break;
    case CalibMethod::kLaplace:
      if (!model.posterior) throw ArgumentError("laplace model without a posterior");
      write_posterior(dir / "posterior.lap", *model.posterior);
      break;
    case CalibMethod::kEnsemble:
    case CalibMethod::kLaplaceEnsemble:
      write_ensemble(dir / "ensemble", model.ensemble);
      break;
  }
  nlohmann::ordered_json meta;
  meta["method"] = calib_method_name(model.method);
  meta["predictive"] = ensemble_mode_name(model.ensemble_mode);
  detail::write_file_atomic(dir / "model.json", meta.dump(2) + "\n");
}

MethodModel load_method_model(const std::filesystem::path& dir) {
  MethodModel m;
  try {
    const auto meta = nlohmann::json::parse(detail::read_file(dir / "model.json"));
    m.method = parse_calib_method(meta.at("method").get<std::string>());
    m.ensemble_mode = parse_ensemble_mode(meta.value("predictive", "bridge"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "model.json").string() + ": " + e.what(), 0);
  }
  switch (m.method) {
    case CalibMethod::kMap:
      m.head = read_head(dir / "model.smh");
      break;
    case CalibMethod::kLaplace:
      m.posterior = read_posterior(dir / "posterior.lap");
      m.head = m.posterior->map;
      break;
    case CalibMethod::kEnsemble:
    case CalibMethod::kLaplaceEnsemble:
      m.ensemble = read_ensemble(dir / "ensemble");
      if (m.method == CalibMethod::kLaplaceEnsemble && m.ensemble.posteriors.empty()) {
        throw ValidationError("laplace-ensemble model directory has no posteriors");
      }
      break;
  }
  return m;
}

MethodResult assess_method(const MethodModel& model, std::span<const FeatureSequence> test,
                           const std::vector<ClassInfo>& classes, std::size_t bins, int workers) {
  std::vector<Eigen::MatrixXd> probs(test.size());
  std::vector<int> labels(test.size());
  parallel_for(test.size(), workers, [&](std::size_t i) {
    if (!test[i].label) throw ArgumentError("test sequence " + test[i].clip_id + " has no label");
    labels[i] = static_cast<int>(*test[i].label);
    if (test[i].count() > 0) probs[i] = model.predict_frames(test[i]);
  });

  std::vector<Eigen::VectorXd> frames;
  std::vector<int> frame_labels;
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (Eigen::Index r = 0; r < probs[i].rows(); ++r) {
      frames.push_back(probs[i].row(r).transpose());
      frame_labels.push_back(labels[i]);
    }
  }
  MethodResult out;
  out.method = model.method;
  out.report = calibration_report(build_diagram(frames, frame_labels, bins));
  out.eval = evaluate_clips(probs, labels, classes);
  return out;
}

}  // namespace evact
