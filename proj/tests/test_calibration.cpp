#include "evact/calibration.hpp"
#include "evact/errors.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

using namespace evact;
using evact::testing::TempDir;

namespace {

ReliabilityDiagram constant_set(double conf, int n, int n_correct, std::size_t m = 10) {
  std::vector<double> c(static_cast<std::size_t>(n), conf);
  std::vector<std::uint8_t> ok(static_cast<std::size_t>(n), 0);
  std::fill(ok.begin(), ok.begin() + n_correct, 1);
  return build_diagram_from_confidences(c, ok, m);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("single confident correct prediction") {
  const Eigen::VectorXd p = (Eigen::VectorXd(3) << 0.95, 0.03, 0.02).finished();
  const std::vector<Eigen::VectorXd> probs{p};
  const std::vector<int> labels{0};
  const ReliabilityDiagram d = build_diagram(probs, labels);
  REQUIRE(d.bins.size() == 10);
  CHECK(d.bins[9].count == 1);
  CHECK(d.bins[9].mean_confidence == 0.95);
  CHECK(d.bins[9].mean_accuracy == 1.0);
  CHECK(d.non_empty() == 1);
}

TEST_CASE("bin edges are right-closed") {
  CHECK(confidence_bin(0.1, 10) == 0);
  CHECK(confidence_bin(0.0, 10) == 0);
  CHECK(confidence_bin(1.0, 10) == 9);
  CHECK(confidence_bin(0.7, 10) == 6);
  CHECK(confidence_bin(0.70001, 10) == 7);
  CHECK(confidence_bin(0.5, 1) == 0);
}

TEST_CASE("calibrated construction") {
  const ReliabilityDiagram d = constant_set(0.7, 100, 70);
  CHECK(d.bins[6].count == 100);
  CHECK(d.bins[6].mean_confidence == 0.7);
  CHECK(d.bins[6].mean_accuracy == 0.7);
  CHECK(ace(d) == 0.0);
  CHECK(mce(d) == 0.0);
}

TEST_CASE("miscalibrated construction gives 0.4") {
  const ReliabilityDiagram d = constant_set(0.9, 100, 50);
  CHECK(ace(d) == 0.4);
  CHECK(mce(d) == 0.4);
}

TEST_CASE("two bins with gaps 0.1 and 0.3") {
  std::vector<double> c;
  std::vector<std::uint8_t> ok;
  // Bin 4: confidence 0.35, accuracy 1/4 -> gap 0.1.
  for (int i = 0; i < 4; ++i) {
    c.push_back(0.35);
    ok.push_back(i == 0);
  }
  // Bin 9: confidence 0.9, accuracy 6/10 -> gap 0.3.
  for (int i = 0; i < 10; ++i) {
    c.push_back(0.9);
    ok.push_back(i < 6);
  }
  const ReliabilityDiagram d = build_diagram_from_confidences(c, ok);
  CHECK(d.non_empty() == 2);
  CHECK(ace(d) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(mce(d) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("error cases") {
  CHECK_THROWS_AS(build_diagram_from_confidences({}, {}), ArgumentError);
  const std::vector<double> c{0.5};
  const std::vector<std::uint8_t> ok{1};
  CHECK_THROWS_AS(build_diagram_from_confidences(c, ok, 0), ArgumentError);
  const std::vector<double> bad{1.5};
  CHECK_THROWS_AS(build_diagram_from_confidences(bad, ok), ArgumentError);
  ReliabilityDiagram empty;
  empty.bins.resize(10);
  CHECK_THROWS_AS(ace(empty), ArgumentError);
  CHECK_THROWS_AS(mce(empty), ArgumentError);
}

TEST_CASE("fuzzed diagrams: counts, bounds, ace <= mce, shuffle invariance") {
  detail::SplitMix rng(83);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.below(20);
    const std::size_t n = 1 + rng.below(500);
    std::vector<double> c(n);
    std::vector<std::uint8_t> ok(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Mix in exact bin edges and the endpoints.
      const auto r = rng.below(10);
      c[i] = r == 0 ? static_cast<double>(rng.below(m + 1)) / static_cast<double>(m) : rng.unit();
      ok[i] = static_cast<std::uint8_t>(rng.below(2));
    }
    const ReliabilityDiagram d = build_diagram_from_confidences(c, ok, m);
    std::size_t total = 0;
    for (std::size_t b = 0; b < m; ++b) {
      const ReliabilityBin& bin = d.bins[b];
      total += bin.count;
      if (bin.count == 0) continue;
      CHECK(bin.mean_confidence >= 0.0);
      CHECK(bin.mean_confidence <= 1.0);
      CHECK(bin.mean_accuracy >= 0.0);
      CHECK(bin.mean_accuracy <= 1.0);
      // Every member lies inside its bin's half-open interval (bin 0 also takes 0).
      CHECK(bin.mean_confidence <= bin.hi + 1e-12);
      CHECK(bin.mean_confidence >= bin.lo - 1e-12);
    }
    CHECK(total == n);
    for (double v : c) {
      const std::size_t b = confidence_bin(v, m);
      CHECK(b < m);
      CHECK(v <= d.bins[b].hi + 1e-15);
      if (b > 0) CHECK(v > d.bins[b].lo - 1e-15);
    }
    const double a = ace(d), x = mce(d);
    CHECK(a <= x);
    CHECK(a >= 0.0);
    CHECK(x <= 1.0);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<double> c2(n);
    std::vector<std::uint8_t> ok2(n);
    for (std::size_t i = 0; i < n; ++i) {
      c2[i] = c[order[i]];
      ok2[i] = ok[order[i]];
    }
    const ReliabilityDiagram s = build_diagram_from_confidences(c2, ok2, m);
    for (std::size_t b = 0; b < m; ++b) {
      CHECK(s.bins[b].count == d.bins[b].count);
      CHECK(std::abs(s.bins[b].mean_confidence - d.bins[b].mean_confidence) <= 1e-15);
      CHECK(s.bins[b].mean_accuracy == d.bins[b].mean_accuracy);
    }
    CHECK(std::abs(ace(s) - a) <= 1e-15);
    CHECK(std::abs(mce(s) - x) <= 1e-15);
  }
}

TEST_CASE("probability rows use argmax with lowest index on ties") {
  Eigen::MatrixXd rows(2, 2);
  rows << 0.5, 0.5, 0.2, 0.8;
  const std::vector<int> labels{0, 0};
  const ReliabilityDiagram d = build_diagram(rows, labels);
  CHECK(d.bins[4].count == 1);
  CHECK(d.bins[4].mean_accuracy == 1.0);
  CHECK(d.bins[7].mean_accuracy == 0.0);
}

TEST_CASE("csv and svg rendering") {
  const ReliabilityDiagram d = constant_set(0.7, 100, 70);
  const std::string csv = diagram_csv(d);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  CHECK(csv.rfind("bin_index,lo,hi,count,mean_confidence,mean_accuracy\n", 0) == 0);
  const std::string svg = diagram_svg(d, "map");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(diagram_svg(d, "map") == svg);

  TempDir a("cal_a"), b("cal_b");
  render_diagram(d, a / "diagram", "t");
  render_diagram(d, b / "diagram", "t");
  CHECK(slurp(a / "diagram.svg") == slurp(b / "diagram.svg"));
  CHECK(slurp(a / "diagram.csv") == slurp(b / "diagram.csv"));
  CHECK(slurp(a / "diagram.csv") == csv);
}

TEST_CASE("report json fields") {
  const CalibrationReport r = calibration_report(constant_set(0.9, 10, 5));
  const auto j = nlohmann::json::parse(report_json(r, "diagram.svg", "laplace"));
  CHECK(j.at("ace").get<double>() == doctest::Approx(0.4));
  CHECK(j.at("mce").get<double>() == doctest::Approx(0.4));
  CHECK(j.at("m").get<int>() == 10);
  CHECK(j.at("m_plus").get<int>() == 1);
  CHECK(j.at("diagram").get<std::string>() == "diagram.svg");
}
