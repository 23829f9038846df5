#pragma once

#include "evact/classifier.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace evact {

// Parameters are flattened class-major: index j * (dim + 1) + i addresses
// weight i of class j, matching SoftmaxHead::weights row by row.
enum class CovarianceMode : std::uint8_t { kFull = 0, kDiagonal = 1 };

struct GaussianPosterior {
  SoftmaxHead map;              // posterior mean θ*
  CovarianceMode mode{CovarianceMode::kDiagonal};
  Eigen::MatrixXd covariance;   // D x D (full mode)
  Eigen::VectorXd variance;     // D (diagonal mode)
  double prior_precision{1.0};

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(map.num_classes) * static_cast<std::size_t>(map.dim + 1);
  }
};

struct LaplaceConfig {
  double prior_precision{1.0};
  // Full covariance when D <= this, diagonal above. Ignored when `mode` is set.
  std::size_t full_threshold{4096};
  std::optional<CovarianceMode> mode;
};

// Generalised Gauss-Newton precision of the negative log posterior
// Σ_n CE_n + λ/2 ‖θ‖² at `head`: Σ_n (diag p_n - p_n p_nᵀ) ⊗ φ_n φ_nᵀ + λI.
Eigen::MatrixXd ggn_precision(const SoftmaxHead& head, const Dataset& data, double prior_precision);
Eigen::VectorXd ggn_precision_diagonal(const SoftmaxHead& head, const Dataset& data,
                                       double prior_precision);

// Negative log posterior used by the Laplace fit (sum, not mean, over samples).
double negative_log_posterior(const Eigen::MatrixXd& weights, const Dataset& data,
                              double prior_precision);

GaussianPosterior fit_laplace(const SoftmaxHead& head, const Dataset& data,
                              const LaplaceConfig& cfg = {});

struct LogitGaussian {
  Eigen::VectorXd mu;
  Eigen::VectorXd var;
};

// Linearised push-forward: mu = W*[f;1], var_j = [f;1]ᵀ Σ_jj [f;1] with Σ_jj the
// class-j diagonal block (cross-class covariance dropped).
LogitGaussian logit_gaussian(const GaussianPosterior& post, std::span<const float> f);

struct DirichletPrediction {
  Eigen::VectorXd alpha;
  Eigen::VectorXd mean;  // alpha / Σ alpha, computed in log space
};

// Dirichlet from a diagonal Gaussian over logits:
// alpha_j = (1/var_j) (1 - 2/K + e^{mu_j} / K² Σ_l e^{-mu_l}).
DirichletPrediction laplace_bridge(const Eigen::VectorXd& mu, const Eigen::VectorXd& var);

// softmax(mu_j / sqrt(1 + π/8 var_j)).
Eigen::VectorXd probit_predictive(const Eigen::VectorXd& mu, const Eigen::VectorXd& var);

// Per-frame bridge predictive means (N x K).
Eigen::MatrixXd laplace_predict_frames(const GaussianPosterior& post, const FeatureSequence& seq);

struct Ensemble {
  std::vector<SoftmaxHead> members;
  std::vector<GaussianPosterior> posteriors;  // empty unless fitted
  std::vector<std::uint64_t> seeds;
};

// Trains `size` heads with seeds base_seed .. base_seed + size - 1. When
// `laplace` is set each member also gets a posterior (Laplace ensemble).
// Members train on `workers` threads; results do not depend on the worker count.
Ensemble train_ensemble(const Dataset& data, const TrainConfig& cfg, int size,
                        std::uint64_t base_seed, const std::optional<LaplaceConfig>& laplace = {},
                        int workers = 1);

enum class EnsembleMode { kPoint, kBridge, kProbit };

// Uniform average over members of softmax (kPoint) or posterior predictive means.
Eigen::VectorXd ensemble_predict(const Ensemble& ens, std::span<const float> f, EnsembleMode mode);
Eigen::MatrixXd ensemble_predict_frames(const Ensemble& ens, const FeatureSequence& seq,
                                        EnsembleMode mode);

// Posterior file: model file bytes, then u8 mode, f64 λ, then f64 payload
// (D x D row-major for full, D for diagonal).
std::string serialize_posterior(const GaussianPosterior& post);
GaussianPosterior parse_posterior(std::string_view bytes);
GaussianPosterior read_posterior(const std::filesystem::path& path);
void write_posterior(const std::filesystem::path& path, const GaussianPosterior& post);

// Directory layout: member_<i>/model.smh and, when fitted, member_<i>/posterior.lap.
void write_ensemble(const std::filesystem::path& dir, const Ensemble& ens);
Ensemble read_ensemble(const std::filesystem::path& dir);

}  // namespace evact
