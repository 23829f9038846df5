#pragma once

#include "evact/features.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace evact {

// Linear layer + softmax. The bias is the last column of `weights`, so the
// logits are weights * [f; 1].
struct SoftmaxHead {
  int num_classes{0};
  int dim{0};
  Eigen::MatrixXd weights;  // num_classes x (dim + 1)

  SoftmaxHead() = default;
  SoftmaxHead(int k, int d) : num_classes(k), dim(d), weights(Eigen::MatrixXd::Zero(k, d + 1)) {}

  Eigen::VectorXd logits(std::span<const float> f) const;
};

// Training rows with the constant 1 appended, plus labels.
struct Dataset {
  int num_classes{0};
  // n x (dim + 1), row-major so minibatch gathers copy contiguous rows.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x;
  std::vector<int> labels;

  int dim() const { return static_cast<int>(x.cols()) - 1; }
  std::size_t size() const { return labels.size(); }
};

// Stacks every row of every labelled sequence.
Dataset make_dataset(std::span<const FeatureSequence> sequences, int num_classes);
Eigen::VectorXd augment(std::span<const float> f);

enum class ClassWeighting { kUniform, kBalanced, kExplicit };

struct TrainConfig {
  double learning_rate{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double epsilon{1e-8};
  double weight_decay{1e-4};
  int epochs{50};
  int batch_size{256};
  std::uint64_t seed{0};
  ClassWeighting weighting{ClassWeighting::kUniform};
  std::vector<double> class_weights;  // used with kExplicit
};

struct EpochLog {
  int epoch{0};
  double loss{0.0};
  double train_acc{0.0};
  double val_acc{0.0};  // NaN without a validation set
};

// Per-class loss weights ∝ 1 / count, scaled to mean 1. Throws when a class is absent.
std::vector<double> balanced_class_weights(std::span<const int> labels, int num_classes);

// Weighted mean cross entropy Σ c_y CE / Σ c_y over `rows` (all rows when empty).
// Writes the gradient with respect to the weights when `grad` is non-null.
double weighted_cross_entropy(const Eigen::MatrixXd& weights, const Dataset& data,
                              std::span<const double> class_weights, Eigen::MatrixXd* grad,
                              std::span<const std::size_t> rows = {});

// Mini-batch AdamW (bias-corrected moments, decoupled weight decay) on the
// weighted cross entropy. Deterministic for a given seed.
SoftmaxHead train(const Dataset& data, const TrainConfig& cfg, std::vector<EpochLog>* log = nullptr,
                  const Dataset* validation = nullptr);

// One optimizer step from a given head; exposed for tests.
struct AdamState {
  Eigen::MatrixXd m, v;
  long step{0};
};
void adamw_step(Eigen::MatrixXd& weights, const Eigen::MatrixXd& grad, AdamState& state,
                const TrainConfig& cfg);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Index of the maximum; lowest index on ties.
int argmax(const Eigen::VectorXd& v);

// Most frequent label; lowest label on ties.
int mode_label(std::span<const int> labels, int num_classes);

Eigen::VectorXd predict_frame(const SoftmaxHead& head, std::span<const float> f);

// Per-frame probability rows (N x K) for a clip.
Eigen::MatrixXd predict_frames(const SoftmaxHead& head, const FeatureSequence& seq);

// Clip decision rules over per-frame probability rows.
int clip_label_mode(const Eigen::MatrixXd& frame_probs);
int clip_label_accumulated(const Eigen::MatrixXd& frame_probs);

int predict_clip_mode(const SoftmaxHead& head, const FeatureSequence& seq);
int predict_clip_accumulated(const SoftmaxHead& head, const FeatureSequence& seq);

// Model file: "SMH1", u32 version, u32 K, u32 dim, then K*(dim+1) f64 row-major.
std::string serialize_head(const SoftmaxHead& head);
SoftmaxHead parse_head(std::string_view bytes);
SoftmaxHead read_head(const std::filesystem::path& path);
void write_head(const std::filesystem::path& path, const SoftmaxHead& head);

// CSV with columns epoch,loss,train_acc,val_acc.
std::string training_log_csv(std::span<const EpochLog> log);

}  // namespace evact
