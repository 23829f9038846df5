#include "evact/bayesian.hpp"

#include "binary_io.hpp"

#include <json.hpp>

#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

namespace evact {

namespace {

Eigen::MatrixXd class_probabilities(const SoftmaxHead& head, const Dataset& data) {
  Eigen::MatrixXd p = data.x * head.weights.transpose();
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) = softmax(p.row(i).transpose()).transpose();
  return p;
}

void check_dims(const SoftmaxHead& head, const Dataset& data) {
  if (data.size() > 0 && (data.dim() != head.dim || data.num_classes != head.num_classes)) {
    throw ArgumentError("dataset shape does not match the head");
  }
}

double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

Eigen::MatrixXd ggn_precision(const SoftmaxHead& head, const Dataset& data, double prior_precision) {
  check_dims(head, data);
  const Eigen::Index k = head.num_classes;
  const Eigen::Index d1 = head.dim + 1;
  Eigen::MatrixXd h = prior_precision * Eigen::MatrixXd::Identity(k * d1, k * d1);
  if (data.size() == 0) return h;
  const Eigen::MatrixXd p = class_probabilities(head, data);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index l = j; l < k; ++l) {
      Eigen::ArrayXd a = -p.col(j).array() * p.col(l).array();
      if (j == l) a += p.col(j).array();
      const Eigen::MatrixXd block =
          (data.x.array().colwise() * a).matrix().transpose() * data.x;
      h.block(j * d1, l * d1, d1, d1) += block;
      if (l != j) h.block(l * d1, j * d1, d1, d1) += block.transpose();
    }
  }
  return h;
}

Eigen::VectorXd ggn_precision_diagonal(const SoftmaxHead& head, const Dataset& data,
                                       double prior_precision) {
  check_dims(head, data);
  const Eigen::Index k = head.num_classes;
  const Eigen::Index d1 = head.dim + 1;
  Eigen::VectorXd diag = Eigen::VectorXd::Constant(k * d1, prior_precision);
  if (data.size() == 0) return diag;
  const Eigen::MatrixXd p = class_probabilities(head, data);
  const Eigen::MatrixXd x2 = data.x.array().square().matrix();
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::VectorXd a = (p.col(j).array() * (1.0 - p.col(j).array())).matrix();
    diag.segment(j * d1, d1) += x2.transpose() * a;
  }
  return diag;
}

double negative_log_posterior(const Eigen::MatrixXd& weights, const Dataset& data,
                              double prior_precision) {
  double nll = 0.0;
  if (data.size() > 0) {
    const Eigen::MatrixXd z = data.x * weights.transpose();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      nll += log_sum_exp(z.row(i).transpose()) - z(i, data.labels[static_cast<std::size_t>(i)]);
    }
  }
  return nll + 0.5 * prior_precision * weights.squaredNorm();
}

GaussianPosterior fit_laplace(const SoftmaxHead& head, const Dataset& data,
                              const LaplaceConfig& cfg) {
  if (!(cfg.prior_precision > 0.0)) throw ArgumentError("prior precision must be positive");
  GaussianPosterior post;
  post.map = head;
  post.prior_precision = cfg.prior_precision;
  const std::size_t d = post.parameter_count();
  post.mode = cfg.mode.value_or(d <= cfg.full_threshold ? CovarianceMode::kFull
                                                        : CovarianceMode::kDiagonal);
  if (post.mode == CovarianceMode::kDiagonal) {
    post.variance = ggn_precision_diagonal(head, data, cfg.prior_precision).cwiseInverse();
    return post;
  }
  const Eigen::MatrixXd precision = ggn_precision(head, data, cfg.prior_precision);
  const Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericError("Cholesky factorisation of the posterior precision failed; "
                       "try a larger prior precision");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(n, n));
  post.covariance = 0.5 * (cov + cov.transpose());
  return post;
}

LogitGaussian logit_gaussian(const GaussianPosterior& post, std::span<const float> f) {
  const SoftmaxHead& head = post.map;
  LogitGaussian out{head.logits(f), Eigen::VectorXd(head.num_classes)};
  const Eigen::VectorXd phi = augment(f);
  const Eigen::Index d1 = head.dim + 1;
  for (Eigen::Index j = 0; j < head.num_classes; ++j) {
    if (post.mode == CovarianceMode::kFull) {
      out.var[j] = phi.dot(post.covariance.block(j * d1, j * d1, d1, d1) * phi);
    } else {
      out.var[j] = phi.cwiseAbs2().dot(post.variance.segment(j * d1, d1));
    }
  }
  return out;
}

DirichletPrediction laplace_bridge(const Eigen::VectorXd& mu, const Eigen::VectorXd& var) {
  const Eigen::Index k = mu.size();
  if (k < 2 || var.size() != k) throw ArgumentError("bridge needs matching mu/var with K >= 2");
  if (!((var.array() > 0.0).all())) throw ArgumentError("logit variances must be positive");
  const double kd = static_cast<double>(k);
  const double c = 1.0 - 2.0 / kd;
  const double log_c = c > 0.0 ? std::log(c) : -std::numeric_limits<double>::infinity();
  // e^{mu_j} Σ_l e^{-mu_l} / K² evaluated as exp(mu_j + lse(-mu) - 2 log K),
  // which is invariant to a common shift of mu.
  const Eigen::VectorXd shifted = mu.array() - mu.maxCoeff();
  const double lse_neg = log_sum_exp(-shifted);
  Eigen::VectorXd log_alpha(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double a = shifted[j] + lse_neg - 2.0 * std::log(kd);
    log_alpha[j] = log_add_exp(log_c, a) - std::log(var[j]);
  }
  DirichletPrediction out;
  out.alpha = log_alpha.array().exp();
  out.mean = softmax(log_alpha);
  return out;
}

Eigen::VectorXd probit_predictive(const Eigen::VectorXd& mu, const Eigen::VectorXd& var) {
  if (var.size() != mu.size()) throw ArgumentError("mu and var sizes differ");
  if ((var.array() < 0.0).any()) throw ArgumentError("logit variances must be non-negative");
  const Eigen::VectorXd scaled =
      mu.array() / (1.0 + (std::numbers::pi / 8.0) * var.array()).sqrt();
  return softmax(scaled);
}

Eigen::MatrixXd laplace_predict_frames(const GaussianPosterior& post, const FeatureSequence& seq) {
  if (seq.count() == 0) throw ArgumentError("empty feature sequence");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(seq.count()), post.map.num_classes);
  for (std::size_t i = 0; i < seq.count(); ++i) {
    const LogitGaussian lg = logit_gaussian(post, seq.row(i));
    out.row(static_cast<Eigen::Index>(i)) = laplace_bridge(lg.mu, lg.var).mean.transpose();
  }
  return out;
}

Ensemble train_ensemble(const Dataset& data, const TrainConfig& cfg, int size,
                        std::uint64_t base_seed, const std::optional<LaplaceConfig>& laplace,
                        int workers) {
  if (size < 1) throw ArgumentError("ensemble size must be >= 1");
  Ensemble ens;
  ens.members.resize(static_cast<std::size_t>(size));
  if (laplace) ens.posteriors.resize(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) ens.seeds.push_back(base_seed + static_cast<std::uint64_t>(i));

  std::mutex mu;
  std::exception_ptr first_error;
  int first_error_member = size;
  auto run_member = [&](int i) {
    try {
      TrainConfig member_cfg = cfg;
      member_cfg.seed = ens.seeds[static_cast<std::size_t>(i)];
      ens.members[static_cast<std::size_t>(i)] = train(data, member_cfg);
      if (laplace) {
        ens.posteriors[static_cast<std::size_t>(i)] =
            fit_laplace(ens.members[static_cast<std::size_t>(i)], data, *laplace);
      }
    } catch (const std::exception& e) {
      std::lock_guard lock(mu);
      if (i < first_error_member) {
        first_error_member = i;
        first_error = std::make_exception_ptr(
            Error("ensemble member " + std::to_string(i) + " failed: " + e.what()));
      }
    }
  };

  const int n_threads = std::max(1, std::min(workers, size));
  if (n_threads == 1) {
    for (int i = 0; i < size; ++i) run_member(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        for (int i = t; i < size; i += n_threads) run_member(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return ens;
}

Eigen::VectorXd ensemble_predict(const Ensemble& ens, std::span<const float> f, EnsembleMode mode) {
  if (ens.members.empty()) throw ArgumentError("empty ensemble");
  if (mode != EnsembleMode::kPoint && ens.posteriors.size() != ens.members.size()) {
    throw ArgumentError("posterior predictive requested but the ensemble has no fitted posteriors");
  }
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(ens.members.front().num_classes);
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    switch (mode) {
      case EnsembleMode::kPoint:
        acc += predict_frame(ens.members[i], f);
        break;
      case EnsembleMode::kBridge: {
        const LogitGaussian lg = logit_gaussian(ens.posteriors[i], f);
        acc += laplace_bridge(lg.mu, lg.var).mean;
        break;
      }
      case EnsembleMode::kProbit: {
        const LogitGaussian lg = logit_gaussian(ens.posteriors[i], f);
        acc += probit_predictive(lg.mu, lg.var);
        break;
      }
    }
  }
  return acc / static_cast<double>(ens.members.size());
}

Eigen::MatrixXd ensemble_predict_frames(const Ensemble& ens, const FeatureSequence& seq,
                                        EnsembleMode mode) {
  if (seq.count() == 0) throw ArgumentError("empty feature sequence");
  if (ens.members.empty()) throw ArgumentError("empty ensemble");
  if (mode == EnsembleMode::kPoint) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(seq.count()),
                                                ens.members.front().num_classes);
    for (const SoftmaxHead& m : ens.members) acc += predict_frames(m, seq);
    return acc / static_cast<double>(ens.members.size());
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(seq.count()), ens.members.front().num_classes);
  for (std::size_t i = 0; i < seq.count(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = ensemble_predict(ens, seq.row(i), mode).transpose();
  }
  return out;
}

std::string serialize_posterior(const GaussianPosterior& post) {
  detail::ByteWriter out;
  out.put_bytes(serialize_head(post.map));
  out.put<std::uint8_t>(static_cast<std::uint8_t>(post.mode));
  out.put<double>(post.prior_precision);
  if (post.mode == CovarianceMode::kFull) {
    for (Eigen::Index r = 0; r < post.covariance.rows(); ++r) {
      for (Eigen::Index c = 0; c < post.covariance.cols(); ++c) out.put<double>(post.covariance(r, c));
    }
  } else {
    for (Eigen::Index i = 0; i < post.variance.size(); ++i) out.put<double>(post.variance[i]);
  }
  return out.take();
}

GaussianPosterior parse_posterior(std::string_view bytes) {
  detail::ByteReader header(bytes);
  header.get_bytes(8);
  const auto k = header.get<std::uint32_t>();
  const auto dim = header.get<std::uint32_t>();
  const std::size_t d = std::size_t{k} * (std::size_t{dim} + 1);
  const std::size_t head_len = 16 + d * sizeof(double);
  if (bytes.size() < head_len) throw ParseError("truncated posterior file", bytes.size());
  GaussianPosterior post;
  post.map = parse_head(bytes.substr(0, head_len));
  detail::ByteReader in(bytes.substr(head_len));
  const auto mode = in.get<std::uint8_t>();
  if (mode > 1) throw ParseError("unknown covariance mode", head_len);
  post.mode = static_cast<CovarianceMode>(mode);
  post.prior_precision = in.get<double>();
  const auto n = static_cast<Eigen::Index>(d);
  if (post.mode == CovarianceMode::kFull) {
    post.covariance.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) post.covariance(r, c) = in.get<double>();
    }
  } else {
    post.variance.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) post.variance[i] = in.get<double>();
  }
  if (in.remaining() != 0) throw ParseError("trailing bytes in posterior file", head_len + in.pos());
  return post;
}

GaussianPosterior read_posterior(const std::filesystem::path& path) {
  return parse_posterior(detail::read_file(path));
}

void write_posterior(const std::filesystem::path& path, const GaussianPosterior& post) {
  detail::write_file_atomic(path, serialize_posterior(post));
}

void write_ensemble(const std::filesystem::path& dir, const Ensemble& ens) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["size"] = ens.members.size();
  meta["seeds"] = ens.seeds;
  meta["laplace"] = !ens.posteriors.empty();
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    const auto member_dir = dir / ("member_" + std::to_string(i));
    std::filesystem::create_directories(member_dir);
    write_head(member_dir / "model.smh", ens.members[i]);
    if (!ens.posteriors.empty()) write_posterior(member_dir / "posterior.lap", ens.posteriors[i]);
  }
  detail::write_file_atomic(dir / "ensemble.json", meta.dump(2) + "\n");
}

Ensemble read_ensemble(const std::filesystem::path& dir) {
  Ensemble ens;
  std::size_t size = 0;
  bool laplace = false;
  try {
    const auto meta = nlohmann::json::parse(detail::read_file(dir / "ensemble.json"));
    size = meta.at("size").get<std::size_t>();
    ens.seeds = meta.at("seeds").get<std::vector<std::uint64_t>>();
    laplace = meta.at("laplace").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ensemble.json: ") + e.what(), 0);
  }
  for (std::size_t i = 0; i < size; ++i) {
    const auto member_dir = dir / ("member_" + std::to_string(i));
    if (laplace) {
      ens.posteriors.push_back(read_posterior(member_dir / "posterior.lap"));
      ens.members.push_back(ens.posteriors.back().map);
    } else {
      ens.members.push_back(read_head(member_dir / "model.smh"));
    }
  }
  return ens;
}

}  // namespace evact
