#include "evact/classifier.hpp"

#include "binary_io.hpp"
#include "rng.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace evact {

namespace {

constexpr std::string_view kModelMagic = "SMH1";
constexpr std::uint32_t kModelVersion = 1;

std::vector<double> resolve_class_weights(const Dataset& data, const TrainConfig& cfg) {
  switch (cfg.weighting) {
    case ClassWeighting::kUniform:
      return std::vector<double>(static_cast<std::size_t>(data.num_classes), 1.0);
    case ClassWeighting::kBalanced:
      return balanced_class_weights(data.labels, data.num_classes);
    case ClassWeighting::kExplicit:
      if (cfg.class_weights.size() != static_cast<std::size_t>(data.num_classes)) {
        throw ArgumentError("explicit class weights must have one entry per class");
      }
      return cfg.class_weights;
  }
  return {};
}

// Row-wise softmax in place.
void softmax_rows(Eigen::MatrixXd& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp();
    z.row(i) /= z.row(i).sum();
  }
}

double accuracy(const Eigen::MatrixXd& weights, const Dataset& data) {
  if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::MatrixXd z = data.x * weights.transpose();
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (argmax(z.row(i).transpose()) == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

Eigen::VectorXd augment(std::span<const float> f) {
  Eigen::VectorXd phi(static_cast<Eigen::Index>(f.size()) + 1);
  for (std::size_t i = 0; i < f.size(); ++i) phi[static_cast<Eigen::Index>(i)] = f[i];
  phi[static_cast<Eigen::Index>(f.size())] = 1.0;
  return phi;
}

Eigen::VectorXd SoftmaxHead::logits(std::span<const float> f) const {
  if (static_cast<int>(f.size()) != dim) {
    throw ArgumentError("feature dimension " + std::to_string(f.size()) + " does not match head (" +
                        std::to_string(dim) + ")");
  }
  return weights * augment(f);
}

Dataset make_dataset(std::span<const FeatureSequence> sequences, int num_classes) {
  if (num_classes < 2) throw ArgumentError("need at least two classes");
  std::size_t rows = 0;
  std::uint32_t dim = 0;
  for (const FeatureSequence& s : sequences) {
    if (!s.label) throw ArgumentError("sequence " + s.clip_id + " has no label");
    if (static_cast<int>(*s.label) >= num_classes) {
      throw ArgumentError("label " + std::to_string(*s.label) + " out of range");
    }
    if (s.count() == 0) continue;
    if (dim == 0) dim = s.dim;
    if (s.dim != dim) throw ArgumentError("inconsistent feature dimension in " + s.clip_id);
    rows += s.count();
  }
  Dataset data;
  data.num_classes = num_classes;
  data.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim) + 1);
  data.labels.reserve(rows);
  Eigen::Index r = 0;
  for (const FeatureSequence& s : sequences) {
    for (std::size_t i = 0; i < s.count(); ++i, ++r) {
      const auto row = s.row(i);
      for (std::uint32_t j = 0; j < dim; ++j) data.x(r, j) = row[j];
      data.x(r, dim) = 1.0;
      data.labels.push_back(static_cast<int>(*s.label));
    }
  }
  return data;
}

std::vector<double> balanced_class_weights(std::span<const int> labels, int num_classes) {
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0.0) {
      throw ArgumentError("class " + std::to_string(c) + " absent from training data");
    }
    w[c] = 1.0 / counts[c];
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (double& v : w) v /= mean;
  return w;
}

double weighted_cross_entropy(const Eigen::MatrixXd& weights, const Dataset& data,
                              std::span<const double> class_weights, Eigen::MatrixXd* grad,
                              std::span<const std::size_t> rows) {
  const std::size_t n = rows.empty() ? data.size() : rows.size();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xb(static_cast<Eigen::Index>(n), data.x.cols());
  std::vector<int> yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rows.empty() ? i : rows[i];
    xb.row(static_cast<Eigen::Index>(i)) = data.x.row(static_cast<Eigen::Index>(r));
    yb[i] = data.labels[r];
  }
  Eigen::MatrixXd z = xb * weights.transpose();
  double loss = 0.0;
  double total_weight = 0.0;
  Eigen::MatrixXd delta(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    const int y = yb[static_cast<std::size_t>(i)];
    const double c = class_weights[static_cast<std::size_t>(y)];
    loss += c * (lse - z(i, y));
    total_weight += c;
    delta.row(i) = c * (z.row(i).array() - lse).exp();
    delta(i, y) -= c;
  }
  if (grad) *grad = delta.transpose() * xb / total_weight;
  return loss / total_weight;
}

void adamw_step(Eigen::MatrixXd& weights, const Eigen::MatrixXd& grad, AdamState& state,
                const TrainConfig& cfg) {
  if (state.m.size() == 0) {
    state.m = Eigen::MatrixXd::Zero(weights.rows(), weights.cols());
    state.v = Eigen::MatrixXd::Zero(weights.rows(), weights.cols());
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  weights *= 1.0 - cfg.learning_rate * cfg.weight_decay;
  weights.array() -= cfg.learning_rate * (state.m.array() / bc1) /
                     ((state.v.array() / bc2).sqrt() + cfg.epsilon);
}

SoftmaxHead train(const Dataset& data, const TrainConfig& cfg, std::vector<EpochLog>* log,
                  const Dataset* validation) {
  if (!(cfg.learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (cfg.epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (data.size() == 0) throw ArgumentError("empty training set");
  const std::vector<double> class_weights = resolve_class_weights(data, cfg);

  const int k = data.num_classes;
  const int dim = data.dim();
  SoftmaxHead head(k, dim);
  detail::SplitMix rng(cfg.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim + 1));
  for (Eigen::Index i = 0; i < head.weights.size(); ++i) {
    head.weights.data()[i] = rng.uniform(-bound, bound);
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamState state;
  Eigen::MatrixXd grad;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t len = std::min(batch, order.size() - start);
      const std::span<const std::size_t> rows(order.data() + start, len);
      const double loss = weighted_cross_entropy(head.weights, data, class_weights, &grad, rows);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged (loss is not finite) at epoch " +
                           std::to_string(epoch));
      }
      epoch_loss += loss * static_cast<double>(len);
      seen += len;
      adamw_step(head.weights, grad, state, cfg);
    }
    if (!head.weights.allFinite()) {
      throw NumericError("training diverged (non-finite weights) at epoch " + std::to_string(epoch));
    }
    if (log) {
      log->push_back(EpochLog{epoch, epoch_loss / static_cast<double>(seen),
                              accuracy(head.weights, data),
                              validation ? accuracy(head.weights, *validation)
                                         : std::numeric_limits<double>::quiet_NaN()});
    }
  }
  return head;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp();
  return p / p.sum();
}

int argmax(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index j = 1; j < v.size(); ++j) {
    if (v[j] > v[best]) best = static_cast<int>(j);
  }
  return best;
}

int mode_label(std::span<const int> labels, int num_classes) {
  if (labels.empty()) throw ArgumentError("mode of an empty label sequence");
  std::vector<int> votes(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++votes[static_cast<std::size_t>(y)];
  int best = 0;
  for (int j = 1; j < num_classes; ++j) {
    if (votes[static_cast<std::size_t>(j)] > votes[static_cast<std::size_t>(best)]) best = j;
  }
  return best;
}

Eigen::VectorXd predict_frame(const SoftmaxHead& head, std::span<const float> f) {
  return softmax(head.logits(f));
}

Eigen::MatrixXd predict_frames(const SoftmaxHead& head, const FeatureSequence& seq) {
  if (seq.count() == 0) throw ArgumentError("empty feature sequence");
  if (static_cast<int>(seq.dim) != head.dim) throw ArgumentError("feature dimension mismatch");
  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> f(
      seq.values.data(), static_cast<Eigen::Index>(seq.count()), seq.dim);
  Eigen::MatrixXd z = f.cast<double>() * head.weights.leftCols(head.dim).transpose();
  z.rowwise() += head.weights.col(head.dim).transpose();
  softmax_rows(z);
  return z;
}

int clip_label_mode(const Eigen::MatrixXd& frame_probs) {
  if (frame_probs.rows() == 0) throw ArgumentError("empty sequence");
  std::vector<int> labels(static_cast<std::size_t>(frame_probs.rows()));
  for (Eigen::Index i = 0; i < frame_probs.rows(); ++i) {
    labels[static_cast<std::size_t>(i)] = argmax(frame_probs.row(i).transpose());
  }
  return mode_label(labels, static_cast<int>(frame_probs.cols()));
}

int clip_label_accumulated(const Eigen::MatrixXd& frame_probs) {
  if (frame_probs.rows() == 0) throw ArgumentError("empty sequence");
  return argmax(frame_probs.colwise().sum().transpose());
}

int predict_clip_mode(const SoftmaxHead& head, const FeatureSequence& seq) {
  return clip_label_mode(predict_frames(head, seq));
}

int predict_clip_accumulated(const SoftmaxHead& head, const FeatureSequence& seq) {
  return clip_label_accumulated(predict_frames(head, seq));
}

std::string serialize_head(const SoftmaxHead& head) {
  detail::ByteWriter out;
  out.put_bytes(kModelMagic);
  out.put<std::uint32_t>(kModelVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(head.num_classes));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(head.dim));
  for (int j = 0; j < head.num_classes; ++j) {
    for (int i = 0; i <= head.dim; ++i) out.put<double>(head.weights(j, i));
  }
  return out.take();
}

SoftmaxHead parse_head(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.get_bytes(4) != kModelMagic) throw ParseError("bad magic, expected SMH1", 0);
  const auto version = in.get<std::uint32_t>();
  if (version != kModelVersion) {
    throw ParseError("unsupported model version " + std::to_string(version), 4);
  }
  const auto k = in.get<std::uint32_t>();
  const auto dim = in.get<std::uint32_t>();
  if (k < 2) throw ParseError("model must have at least two classes", 8);
  SoftmaxHead head(static_cast<int>(k), static_cast<int>(dim));
  for (std::uint32_t j = 0; j < k; ++j) {
    for (std::uint32_t i = 0; i <= dim; ++i) {
      const double w = in.get<double>();
      if (!std::isfinite(w)) throw ParseError("non-finite weight", in.pos() - 8);
      head.weights(j, i) = w;
    }
  }
  if (in.remaining() != 0) throw ParseError("trailing bytes after weights", in.pos());
  return head;
}

SoftmaxHead read_head(const std::filesystem::path& path) {
  return parse_head(detail::read_file(path));
}

void write_head(const std::filesystem::path& path, const SoftmaxHead& head) {
  detail::write_file_atomic(path, serialize_head(head));
}

std::string training_log_csv(std::span<const EpochLog> log) {
  std::ostringstream out;
  out.precision(10);
  out << "epoch,loss,train_acc,val_acc\n";
  for (const EpochLog& e : log) {
    out << e.epoch << ',' << e.loss << ',' << e.train_acc << ',';
    if (std::isnan(e.val_acc)) {
      out << "nan";
    } else {
      out << e.val_acc;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace evact
