#include "evact/calibration.hpp"

#include "binary_io.hpp"
#include "evact/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace evact {

namespace {

// Neumaier-compensated running sum, so that means of repeated values round
// back to the value itself.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_{0.0};
  double comp_{0.0};
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

int argmax_lowest(const Eigen::VectorXd& p) {
  int best = 0;
  for (Eigen::Index j = 1; j < p.size(); ++j) {
    if (p[j] > p[best]) best = static_cast<int>(j);
  }
  return best;
}

}  // namespace

std::size_t ReliabilityDiagram::non_empty() const {
  return static_cast<std::size_t>(
      std::count_if(bins.begin(), bins.end(), [](const ReliabilityBin& b) { return b.count > 0; }));
}

std::size_t confidence_bin(double confidence, std::size_t m) {
  const double scaled = std::ceil(confidence * static_cast<double>(m));
  const double clamped = std::clamp(scaled, 1.0, static_cast<double>(m));
  return static_cast<std::size_t>(clamped) - 1;
}

ReliabilityDiagram build_diagram_from_confidences(std::span<const double> confidences,
                                                  std::span<const std::uint8_t> correct,
                                                  std::size_t m) {
  if (m < 1) throw ArgumentError("need at least one bin");
  if (confidences.empty()) throw ArgumentError("empty prediction list");
  if (confidences.size() != correct.size()) throw ArgumentError("confidence/label count mismatch");
  std::vector<CompensatedSum> conf_sum(m), acc_sum(m);
  ReliabilityDiagram d;
  d.bins.resize(m);
  for (std::size_t b = 0; b < m; ++b) {
    d.bins[b].lo = static_cast<double>(b) / static_cast<double>(m);
    d.bins[b].hi = static_cast<double>(b + 1) / static_cast<double>(m);
  }
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw ArgumentError("confidence outside [0, 1]");
    const std::size_t b = confidence_bin(c, m);
    ++d.bins[b].count;
    conf_sum[b].add(c);
    acc_sum[b].add(correct[i] != 0 ? 1.0 : 0.0);
  }
  for (std::size_t b = 0; b < m; ++b) {
    if (d.bins[b].count == 0) continue;
    const auto n = static_cast<double>(d.bins[b].count);
    d.bins[b].mean_confidence = conf_sum[b].value() / n;
    d.bins[b].mean_accuracy = acc_sum[b].value() / n;
  }
  d.total = confidences.size();
  return d;
}

ReliabilityDiagram build_diagram(std::span<const Eigen::VectorXd> probs, std::span<const int> labels,
                                 std::size_t m) {
  if (probs.size() != labels.size()) throw ArgumentError("prediction/label count mismatch");
  std::vector<double> conf(probs.size());
  std::vector<std::uint8_t> correct(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    conf[i] = std::clamp(probs[i].maxCoeff(), 0.0, 1.0);
    correct[i] = argmax_lowest(probs[i]) == labels[i];
  }
  return build_diagram_from_confidences(conf, correct, m);
}

ReliabilityDiagram build_diagram(const Eigen::MatrixXd& prob_rows, std::span<const int> labels,
                                 std::size_t m) {
  std::vector<Eigen::VectorXd> rows(static_cast<std::size_t>(prob_rows.rows()));
  for (Eigen::Index i = 0; i < prob_rows.rows(); ++i) {
    rows[static_cast<std::size_t>(i)] = prob_rows.row(i).transpose();
  }
  return build_diagram(rows, labels, m);
}

double ace(const ReliabilityDiagram& diagram) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const ReliabilityBin& b : diagram.bins) {
    if (b.count == 0) continue;
    sum += std::abs(b.mean_confidence - b.mean_accuracy);
    ++n;
  }
  if (n == 0) throw ArgumentError("all bins are empty");
  return sum / static_cast<double>(n);
}

double mce(const ReliabilityDiagram& diagram) {
  double worst = -1.0;
  for (const ReliabilityBin& b : diagram.bins) {
    if (b.count == 0) continue;
    worst = std::max(worst, std::abs(b.mean_confidence - b.mean_accuracy));
  }
  if (worst < 0.0) throw ArgumentError("all bins are empty");
  return worst;
}

CalibrationReport calibration_report(const ReliabilityDiagram& diagram) {
  return CalibrationReport{ace(diagram), mce(diagram), diagram};
}

std::string diagram_csv(const ReliabilityDiagram& diagram) {
  std::string out = "bin_index,lo,hi,count,mean_confidence,mean_accuracy\n";
  for (std::size_t b = 0; b < diagram.bins.size(); ++b) {
    const ReliabilityBin& bin = diagram.bins[b];
    out += std::to_string(b + 1) + "," + fmt("%.6f", bin.lo) + "," + fmt("%.6f", bin.hi) + "," +
           std::to_string(bin.count) + "," + fmt("%.10f", bin.mean_confidence) + "," +
           fmt("%.10f", bin.mean_accuracy) + "\n";
  }
  return out;
}

std::string diagram_svg(const ReliabilityDiagram& diagram, const std::string& title) {
  constexpr double kSize = 400.0;
  constexpr double kMargin = 50.0;
  constexpr double kPlot = kSize - 2 * kMargin;
  auto px = [&](double v) { return kMargin + v * kPlot; };
  auto py = [&](double v) { return kSize - kMargin - v * kPlot; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" "
       "viewBox=\"0 0 400 400\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"400\" height=\"400\" fill=\"white\"/>\n";
  if (!title.empty()) {
    std::string escaped;
    for (char c : title) {
      switch (c) {
        case '<': escaped += "&lt;"; break;
        case '>': escaped += "&gt;"; break;
        case '&': escaped += "&amp;"; break;
        default: escaped += c;
      }
    }
    s += "<text x=\"200\" y=\"25\" text-anchor=\"middle\" font-size=\"14\">" + escaped + "</text>\n";
  }
  const double width = kPlot / static_cast<double>(std::max<std::size_t>(1, diagram.bins.size()));
  for (const ReliabilityBin& b : diagram.bins) {
    if (b.count == 0) continue;
    const double x = px(b.lo);
    // Gap between confidence and accuracy, then the accuracy bar itself.
    const double top = std::max(b.mean_accuracy, b.mean_confidence);
    const double bottom = std::min(b.mean_accuracy, b.mean_confidence);
    s += "<rect x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", py(top)) + "\" width=\"" +
         fmt("%.2f", width) + "\" height=\"" + fmt("%.2f", (top - bottom) * kPlot) +
         "\" fill=\"#e8a0a0\" fill-opacity=\"0.6\" stroke=\"#c04040\"/>\n";
    s += "<rect x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", py(b.mean_accuracy)) +
         "\" width=\"" + fmt("%.2f", width) + "\" height=\"" +
         fmt("%.2f", b.mean_accuracy * kPlot) + "\" fill=\"#4060c0\" stroke=\"#203060\"/>\n";
  }
  s += "<line x1=\"" + fmt("%.2f", px(0)) + "\" y1=\"" + fmt("%.2f", py(0)) + "\" x2=\"" +
       fmt("%.2f", px(1)) + "\" y2=\"" + fmt("%.2f", py(1)) +
       "\" stroke=\"#606060\" stroke-dasharray=\"4 3\"/>\n";
  s += "<rect x=\"50\" y=\"50\" width=\"300\" height=\"300\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 10; t += 2) {
    const double v = t / 10.0;
    s += "<text x=\"" + fmt("%.2f", px(v)) + "\" y=\"365\" text-anchor=\"middle\">" +
         fmt("%.1f", v) + "</text>\n";
    s += "<text x=\"44\" y=\"" + fmt("%.2f", py(v) + 4) + "\" text-anchor=\"end\">" +
         fmt("%.1f", v) + "</text>\n";
  }
  s += "<text x=\"200\" y=\"388\" text-anchor=\"middle\">confidence</text>\n";
  s += "<text x=\"14\" y=\"200\" text-anchor=\"middle\" transform=\"rotate(-90 14 200)\">"
       "accuracy</text>\n";
  s += "</svg>\n";
  return s;
}

void render_diagram(const ReliabilityDiagram& diagram, const std::filesystem::path& stem,
                    const std::string& title) {
  auto svg = stem;
  svg += ".svg";
  auto csv = stem;
  csv += ".csv";
  detail::write_file_atomic(svg, diagram_svg(diagram, title));
  detail::write_file_atomic(csv, diagram_csv(diagram));
}

std::string report_json(const CalibrationReport& report, const std::string& diagram_path,
                        const std::string& method) {
  nlohmann::ordered_json j;
  if (!method.empty()) j["method"] = method;
  j["ace"] = report.ace;
  j["mce"] = report.mce;
  j["m"] = report.diagram.bins.size();
  j["m_plus"] = report.diagram.non_empty();
  j["predictions"] = report.diagram.total;
  j["diagram"] = diagram_path;
  return j.dump(2) + "\n";
}

}  // namespace evact
