#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace evact {

struct ReliabilityBin {
  double lo{0.0};
  double hi{0.0};
  std::size_t count{0};
  double mean_confidence{0.0};
  double mean_accuracy{0.0};
};

struct ReliabilityDiagram {
  std::vector<ReliabilityBin> bins;  // uniform edges on [0, 1]
  std::size_t total{0};

  std::size_t non_empty() const;
};

// 0-based bin of a confidence: bin b covers (b/m, (b+1)/m], and c = 0 falls in bin 0.
std::size_t confidence_bin(double confidence, std::size_t m);

// Confidence of each prediction is max_j p_j; it is correct when the argmax
// (lowest index on ties) equals the label.
ReliabilityDiagram build_diagram(std::span<const Eigen::VectorXd> probs, std::span<const int> labels,
                                 std::size_t m = 10);
ReliabilityDiagram build_diagram(const Eigen::MatrixXd& prob_rows, std::span<const int> labels,
                                 std::size_t m = 10);
ReliabilityDiagram build_diagram_from_confidences(std::span<const double> confidences,
                                                  std::span<const std::uint8_t> correct,
                                                  std::size_t m = 10);

// Mean and max of |C_m - A_m| over non-empty bins.
double ace(const ReliabilityDiagram& diagram);
double mce(const ReliabilityDiagram& diagram);

struct CalibrationReport {
  double ace{0.0};
  double mce{0.0};
  ReliabilityDiagram diagram;
};

CalibrationReport calibration_report(const ReliabilityDiagram& diagram);

// CSV: bin_index,lo,hi,count,mean_confidence,mean_accuracy (one row per bin).
std::string diagram_csv(const ReliabilityDiagram& diagram);
// Self-contained SVG bar chart of accuracy per bin against the identity diagonal.
std::string diagram_svg(const ReliabilityDiagram& diagram, const std::string& title = {});

// Writes <stem>.svg and <stem>.csv. Output bytes depend only on the diagram and title.
void render_diagram(const ReliabilityDiagram& diagram, const std::filesystem::path& stem,
                    const std::string& title = {});

// Structured text (JSON) with ace, mce, m, m_plus and the diagram path.
std::string report_json(const CalibrationReport& report, const std::string& diagram_path,
                        const std::string& method = {});

}  // namespace evact
