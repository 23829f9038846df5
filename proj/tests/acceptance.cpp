// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--expect-fail NAME]... [--only NAME]...
//
// Exit status is 0 when the set of failing criteria equals the set named with
// --expect-fail, 1 otherwise. A criterion that starts passing while marked as
// expected to fail also counts as a mismatch, so the mark cannot go stale.

#include "evact/bayesian.hpp"
#include "evact/blob_tracker.hpp"
#include "evact/calibration.hpp"
#include "evact/pipeline.hpp"
#include "evact/representations.hpp"
#include "evact/synthgen.hpp"
#include "test_support.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

using namespace evact;
using evact::testing::bit_identical;
using evact::testing::brute_force_frames;
using evact::testing::random_stream;
using evact::testing::TempDir;

namespace {

struct Outcome {
  bool pass{false};
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Outcome frames_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  detail::SplitMix rng(2024);
  int streams = 0, mismatched = 0;
  std::size_t frames_checked = 0;
  while (streams < 200) {
    const Geometry g{static_cast<std::uint16_t>(1 + rng.below(24)), static_cast<std::uint16_t>(1 + rng.below(24))};
    const Micros span = 1000 + static_cast<Micros>(rng.below(3'000'000));
    const EventStream s = random_stream(rng, g, 2 + rng.below(9999), span);
    if (s.t_end() == s.t_begin()) continue;
    ++streams;
    const Micros len = s.t_end() - s.t_begin();
    // Between 1 and about 60 frames per stream.
    const Micros dt = std::max<Micros>(1, len / static_cast<Micros>(1 + rng.below(60)));
    const Micros t_m = 1 + static_cast<Micros>(rng.below(static_cast<std::uint64_t>(2 * len)));
    const auto frames = build_frames(s, FrameParams{dt, t_m});
    const auto oracle = brute_force_frames(s, dt, t_m);
    bool same = frames.size() == oracle.size();
    for (std::size_t k = 0; same && k < frames.size(); ++k) same = bit_identical(frames[k].values, oracle[k]);
    frames_checked += oracle.size();
    mismatched += !same;
  }
  const double secs = seconds_since(t0);
  return {mismatched == 0 && secs < 60.0,
          std::to_string(streams) + " streams, " + std::to_string(frames_checked) + " frames, " +
              std::to_string(mismatched) + " mismatched, " + fmt("%.1f", secs) + " s (limit 60 s)"};
}

Outcome voxel_mass() {
  detail::SplitMix rng(77);
  double worst = 0.0;
  int streams = 0;
  while (streams < 100) {
    const Geometry g{static_cast<std::uint16_t>(1 + rng.below(32)), static_cast<std::uint16_t>(1 + rng.below(32))};
    const EventStream s = random_stream(rng, g, 2 + rng.below(10'000), 1 + static_cast<Micros>(rng.below(5'000'000)));
    if (s.t_end() == s.t_begin()) continue;
    ++streams;
    long signed_count = 0;
    for (const Event& e : s.events()) signed_count += polarity_sign(e.p);
    for (std::uint32_t bins : {2u, 5u, 16u}) {
      const VoxelGrid v = build_voxel_grid(s, bins);
      double total = 0.0;
      for (double x : v.values) total += x;
      const double scale = std::max(1.0, std::abs(static_cast<double>(signed_count)));
      worst = std::max(worst, std::abs(total - static_cast<double>(signed_count)) / scale);
    }
  }
  return {worst <= 1e-9, "100 streams x B in {2,5,16}, worst relative error " + fmt("%.3g", worst) + " (limit 1e-9)"};
}

double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  return (a - ref).cwiseAbs().maxCoeff() / ref.cwiseAbs().maxCoeff();
}

Eigen::MatrixXd fitted_precision(const SoftmaxHead& h, const Dataset& d, double lambda) {
  LaplaceConfig cfg;
  cfg.prior_precision = lambda;
  cfg.mode = CovarianceMode::kFull;
  return fit_laplace(h, d, cfg).covariance.inverse();
}

Outcome laplace_correctness() {
  // Three samples with two features each. For K = 2 the class-0 block is the
  // logistic-regression Hessian Σ p(1-p) φφᵀ + λI and the cross block its
  // negated data term.
  Dataset d;
  d.num_classes = 2;
  d.x.resize(3, 3);
  d.x << 0.5, -1.0, 1.0, -1.5, 0.3, 1.0, 2.0, 0.8, 1.0;
  d.labels = {0, 1, 1};
  SoftmaxHead h(2, 2);
  h.weights << 0.4, -0.3, 0.1, -0.2, 0.5, -0.1;
  const double lambda = 0.8;
  Eigen::Matrix3d data = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d phi = d.x.row(i).transpose();
    const double z = (h.weights.row(0) - h.weights.row(1)).dot(phi);
    const double p = 1.0 / (1.0 + std::exp(-z));
    data += p * (1.0 - p) * phi * phi.transpose();
  }
  Eigen::MatrixXd analytic(6, 6);
  analytic << data + lambda * Eigen::Matrix3d::Identity(), -data, -data,
      data + lambda * Eigen::Matrix3d::Identity();
  const double analytic_err = relative_error(fitted_precision(h, d, lambda), analytic);

  detail::SplitMix rng(31);
  double fd_worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(3));
    const int dim = 1 + static_cast<int>(rng.below(3));
    Dataset f;
    f.num_classes = k;
    f.x.resize(12, dim + 1);
    for (int i = 0; i < 12; ++i) {
      for (int j = 0; j < dim; ++j) f.x(i, j) = rng.normal();
      f.x(i, dim) = 1.0;
      f.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
    }
    SoftmaxHead w(k, dim);
    for (Eigen::Index i = 0; i < w.weights.size(); ++i) w.weights.data()[i] = rng.normal();
    const double lam = 0.1 + rng.unit();
    const Eigen::Index n = w.weights.size();
    const double eps = 1e-4;
    auto bump = [&](Eigen::MatrixXd m, Eigen::Index i, double by) {
      m(i / (dim + 1), i % (dim + 1)) += by;
      return m;
    };
    Eigen::MatrixXd fd(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        const auto nlp = [&](double sa, double sb) {
          return negative_log_posterior(bump(bump(w.weights, a, sa * eps), b, sb * eps), f, lam);
        };
        fd(a, b) = (nlp(1, 1) - nlp(1, -1) - nlp(-1, 1) + nlp(-1, -1)) / (4 * eps * eps);
      }
    }
    fd_worst = std::max(fd_worst, relative_error(fitted_precision(w, f, lam), fd));
  }
  return {analytic_err <= 1e-10 && fd_worst <= 1e-3,
          "analytic relative error " + fmt("%.3g", analytic_err) + " (limit 1e-10), finite-difference worst " +
              fmt("%.3g", fd_worst) + " over 10 instances (limit 1e-3)"};
}

Eigen::VectorXd monte_carlo_softmax(detail::SplitMix& rng, const Eigen::VectorXd& mu, const Eigen::VectorXd& var,
                                    int samples) {
  const Eigen::Index k = mu.size();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd z(k);
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index j = 0; j < k; ++j) z[j] = mu[j] + std::sqrt(var[j]) * rng.normal();
    acc += softmax(z);
  }
  return acc / samples;
}

Outcome bridge_fidelity() {
  detail::SplitMix rng(9);
  int within = 0;
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.below(9));
    Eigen::VectorXd mu(k), var(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      mu[j] = 2.0 * rng.normal();
      var[j] = std::exp(std::log(1e-3) + rng.unit() * std::log(1e4));  // log-uniform on [1e-3, 10]
    }
    const double l1 = (laplace_bridge(mu, var).mean - monte_carlo_softmax(rng, mu, var, 100'000)).cwiseAbs().sum();
    worst = std::max(worst, l1);
    within += l1 <= 0.05;
  }
  double limit_worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.below(9));
    Eigen::VectorXd mu(k);
    for (Eigen::Index j = 0; j < k; ++j) mu[j] = 2.0 * rng.normal();
    const Eigen::VectorXd var = Eigen::VectorXd::Constant(k, 1e-6);
    limit_worst = std::max(limit_worst, (laplace_bridge(mu, var).mean - softmax(mu)).cwiseAbs().sum());
  }
  return {within == 100 && limit_worst <= 1e-3,
          std::to_string(within) + "/100 cases within L1 0.05 of 1e5-sample Monte Carlo (worst " + fmt("%.3f", worst) +
              "); var 1e-6 limit worst L1 to softmax " + fmt("%.3f", limit_worst) + " (limit 1e-3)"};
}

Outcome calibration_metrics() {
  std::vector<double> conf(100, 0.7);
  std::vector<std::uint8_t> ok(100, 0);
  std::fill(ok.begin(), ok.begin() + 70, 1);
  const ReliabilityDiagram calibrated = build_diagram_from_confidences(conf, ok, 10);
  std::fill(conf.begin(), conf.end(), 0.9);
  std::fill(ok.begin(), ok.end(), 0);
  std::fill(ok.begin(), ok.begin() + 50, 1);
  const ReliabilityDiagram off = build_diagram_from_confidences(conf, ok, 10);
  const bool pass = ace(calibrated) == 0.0 && mce(calibrated) == 0.0 && ace(off) == 0.4 && mce(off) == 0.4 &&
                    calibrated.bins.size() == 10;
  return {pass, "M=10; calibrated ACE " + fmt("%.17g", ace(calibrated)) + " MCE " + fmt("%.17g", mce(calibrated)) +
                    "; 0.9/0.5 set ACE " + fmt("%.17g", ace(off)) + " MCE " + fmt("%.17g", mce(off))};
}

struct SyntheticRun {
  Manifest train, test;
  std::vector<FeatureSequence> train_features, test_features;
  Dataset data;
};

SyntheticRun synthetic_run(const DatasetSpec& spec, const std::filesystem::path& dir, int workers) {
  SyntheticRun r;
  const auto [train_path, test_path] = generate_dataset(spec, dir, workers);
  r.train = read_manifest(train_path);
  r.test = read_manifest(test_path);
  r.train_features = featurize_manifest(r.train, {}, {}, workers);
  r.test_features = featurize_manifest(r.test, {}, {}, workers);
  r.data = make_dataset(r.train_features, spec.classes);
  return r;
}

Outcome end_to_end(int workers) {
  const auto t0 = std::chrono::steady_clock::now();
  TempDir dir("accept_e2e");
  DatasetSpec spec;  // 6 classes, 50 train / 20 test per class, base seed 1
  const SyntheticRun run = synthetic_run(spec, dir.path(), workers);
  CalibrationSettings cs;
  cs.workers = workers;
  const MethodModel model = fit_method(CalibMethod::kMap, run.data, cs);
  const MethodResult r = assess_method(model, run.test_features, run.train.classes, 10, workers);
  const double secs = seconds_since(t0);
  const EvalReport& e = r.eval;
  // Both clip rules are held to the bar.
  const double motion = std::min(e.motion_mode, e.motion_accumulated);
  const double overall = std::min(e.overall_mode, e.overall_accumulated);
  return {motion >= 0.90 && overall >= 0.60 && secs < 600.0,
          "motion Acc@1 mode " + fmt("%.3f", e.motion_mode) + " prob " + fmt("%.3f", e.motion_accumulated) +
              " (>= 0.90), static " + fmt("%.3f", e.static_mode) + " / " + fmt("%.3f", e.static_accumulated) +
              ", overall " + fmt("%.3f", e.overall_mode) + " / " + fmt("%.3f", e.overall_accumulated) +
              " (>= 0.60), " + fmt("%.0f", secs) + " s (limit 600 s)"};
}

Outcome calibration_ordering(int workers) {
  const CalibMethod order[4] = {CalibMethod::kMap, CalibMethod::kLaplace, CalibMethod::kEnsemble,
                                CalibMethod::kLaplaceEnsemble};
  double ace_mean[4] = {}, mode_mean[4] = {}, prob_mean[4] = {};
  for (int seed = 0; seed < 5; ++seed) {
    TempDir dir("accept_order");
    DatasetSpec spec;
    spec.base_seed = 1 + 100'000ULL * static_cast<std::uint64_t>(seed);
    spec.test_noise_scale = 5.0;
    const SyntheticRun run = synthetic_run(spec, dir.path(), workers);
    CalibrationSettings cs;
    cs.ensemble_size = 32;
    cs.base_seed = 1000ULL * static_cast<std::uint64_t>(seed);
    cs.workers = workers;
    const MethodModel map = fit_method(CalibMethod::kMap, run.data, cs);
    const MethodModel ens = fit_method(CalibMethod::kEnsemble, run.data, cs);
    const MethodModel models[4] = {map, with_laplace(map, run.data, cs), ens, with_laplace(ens, run.data, cs)};
    for (int i = 0; i < 4; ++i) {
      const MethodResult r = assess_method(models[i], run.test_features, run.train.classes, 10, workers);
      ace_mean[i] += r.report.ace / 5.0;
      mode_mean[i] += r.eval.overall_mode / 5.0;
      prob_mean[i] += r.eval.overall_accumulated / 5.0;
    }
  }
  bool pass = ace_mean[3] <= ace_mean[2] && ace_mean[3] <= ace_mean[0];
  std::string detail = "5 seeds, test noise x5, S=32; mean ACE";
  for (int i = 0; i < 4; ++i) detail += " " + calib_method_name(order[i]) + " " + fmt("%.4f", ace_mean[i]);
  detail += "; prob - mode Acc@1";
  for (int i = 0; i < 4; ++i) {
    pass = pass && prob_mean[i] >= mode_mean[i] - 0.02;
    detail += " " + fmt("%+.3f", prob_mean[i] - mode_mean[i]);
  }
  return {pass, detail + " (>= -0.02)"};
}

Outcome blob_sanity() {
  const BlobTrackerConfig cfg;
  int runs = 0, single = 0;
  double worst_center = 0.0, smallest_radius = 1e300;
  for (SynthPattern pat : {SynthPattern::kTranslateLeft, SynthPattern::kTranslateRight,
                           SynthPattern::kOscillateVertical}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      SynthConfig sc;
      sc.class_id = static_cast<int>(pat);
      sc.seed = seed;
      std::vector<Event> ev;
      std::vector<SynthBodyPose> truth;
      for (Micros t = 0; t < sc.duration; t += 1000) {
        const SynthBodyPose p = synth_body_pose(sc, t);
        truth.push_back(p);
        ev.push_back(Event{t, static_cast<std::uint16_t>(std::lround(p.cx)),
                           static_cast<std::uint16_t>(std::lround(p.cy)), 1});
      }
      const auto blobs = track(EventStream(sc.geometry, ev), cfg);
      ++runs;
      if (blobs.size() != 1) continue;
      ++single;
      const auto& h = blobs[0].history;
      // The first 100 events are burn-in while the smoothed centre catches up.
      for (std::size_t i = 100; i < h.size() && i < truth.size(); ++i) {
        worst_center = std::max(worst_center, std::hypot(h[i].cx - truth[i].cx, h[i].cy - truth[i].cy));
      }
      for (const BlobSample& s : h) smallest_radius = std::min({smallest_radius, s.rx, s.ry});
    }
  }
  // Radii on noisy streams that spawn many blobs.
  detail::SplitMix rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const EventStream s = random_stream(rng, Geometry{180, 250}, 5000, 3'000'000);
    for (const BlobState& b : track(s, cfg)) {
      for (const BlobSample& x : b.history) smallest_radius = std::min({smallest_radius, x.rx, x.ry});
    }
  }
  return {single == runs && worst_center < 2.0 && smallest_radius >= cfg.r_min,
          std::to_string(single) + "/" + std::to_string(runs) + " dot runs gave one blob, worst centre error " +
              fmt("%.3f", worst_center) + " px (< 2), smallest radius " + fmt("%.1f", smallest_radius) +
              " (>= 50)"};
}

Outcome throughput() {
  const std::string cmd = std::string("\"") + EVACT_CLI_PATH + "\" bench --json";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {false, "could not run the bench subcommand"};
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof(buf), pipe)) out += buf;
  const int status = pclose(pipe);
  if (status != 0) return {false, "bench exited with status " + std::to_string(status)};
  const auto j = nlohmann::json::parse(out);
  const double rate = j.at("events_per_second").get<double>();
  return {rate >= 1e6, "bench: " + std::to_string(j.at("events").get<std::size_t>()) + " events at " +
                           fmt("%.3g", rate) + " events/s (>= 1e6)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> expect_fail, only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--expect-fail" || a == "--only") && i + 1 < argc) {
      (a == "--only" ? only : expect_fail).insert(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--expect-fail NAME]... [--only NAME]...\n";
      return 2;
    }
  }
  const int workers = default_workers();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"representation-oracle", frames_oracle},
      {"voxel-mass", voxel_mass},
      {"laplace-correctness", laplace_correctness},
      {"bridge-fidelity", bridge_fidelity},
      {"calibration-metrics", calibration_metrics},
      {"end-to-end-recognition", [&] { return end_to_end(workers); }},
      {"calibration-ordering", [&] { return calibration_ordering(workers); }},
      {"blob-tracker-sanity", blob_sanity},
      {"throughput", throughput},
  };
  int unexpected = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const bool expected = expect_fail.count(name) > 0;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail
              << (expected ? (o.pass ? " [marked expected-fail, now passing]" : " [expected failure]") : "")
              << std::endl;
    unexpected += o.pass == expected;
  }
  return unexpected == 0 ? 0 : 1;
}
