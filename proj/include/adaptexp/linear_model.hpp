#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "adaptexp/random.hpp"

namespace adaptexp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class FeatureKind {
  ArmOneHot,           // d = K
  PerArmInteraction,   // d = K * p, x placed in block a
  AdditiveConfounder,  // d = p + K, [x, e_a]
  EpochArmOneHot,      // d = T + K, [e_t, e_a]
  SiteSelect,          // context is K stacked site vectors of length p; d = p, phi = block a
};

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& name);

/// Deterministic map (context, arm, epoch) -> R^d.
struct FeatureMap {
  FeatureKind kind = FeatureKind::ArmOneHot;
  std::size_t arms = 0;
  std::size_t context_dim = 0;  // p: per-unit covariates (per-site for SiteSelect)
  std::size_t epochs = 0;       // T, only meaningful for EpochArmOneHot

  static FeatureMap arm_one_hot(std::size_t k) { return {FeatureKind::ArmOneHot, k, 0, 0}; }
  static FeatureMap per_arm_interaction(std::size_t k, std::size_t p) {
    return {FeatureKind::PerArmInteraction, k, p, 0};
  }
  static FeatureMap additive_confounder(std::size_t k, std::size_t p) {
    return {FeatureKind::AdditiveConfounder, k, p, 0};
  }
  static FeatureMap epoch_arm_one_hot(std::size_t t, std::size_t k) {
    return {FeatureKind::EpochArmOneHot, k, 0, t};
  }
  static FeatureMap site_select(std::size_t k, std::size_t p) { return {FeatureKind::SiteSelect, k, p, 0}; }

  std::size_t dim() const;
  /// Length of the context vector featurize expects; 0 means the context is ignored.
  std::size_t input_dim() const;
  bool uses_context() const;
  bool temporal() const { return kind == FeatureKind::EpochArmOneHot; }

  bool operator==(const FeatureMap&) const = default;
};

Vector featurize(const FeatureMap& map, const Vector& context, std::size_t arm, std::size_t epoch = 0);

/// phi(x, a)' theta without materialising phi.
double linear_score(const FeatureMap& map, const Vector& context, std::size_t arm, std::size_t epoch,
                    const Vector& theta);

/// Known outcome noise variance s^2 > 0.
struct NoiseModel {
  double s2 = 1.0;
};

NoiseModel make_noise(double s2);

/// N(theta, sigma) over the linear coefficient.
class GaussianPosterior {
 public:
  const Vector& theta() const { return theta_; }
  const Matrix& sigma() const { return sigma_; }
  std::size_t dim() const { return static_cast<std::size_t>(theta_.size()); }

  /// Accepts any symmetric positive semi-definite sigma (a degenerate sigma = 0 is allowed).
  static GaussianPosterior from_moments(Vector theta, Matrix sigma);

 private:
  GaussianPosterior(Vector theta, Matrix sigma) : theta_(std::move(theta)), sigma_(std::move(sigma)) {}

  friend GaussianPosterior posterior_reset(const Vector&, const Matrix&);
  friend GaussianPosterior posterior_update(const GaussianPosterior&, const NoiseModel&, std::span<const Vector>,
                                            std::span<const double>);

  Vector theta_;
  Matrix sigma_;
};

/// Validates prior_cov (square, symmetric to 1e-10, positive definite) and returns exactly the prior.
GaussianPosterior posterior_reset(const Vector& prior_mean, const Matrix& prior_cov);

/// N(0, tau2 * I).
GaussianPosterior isotropic_prior(std::size_t d, double tau2 = 1.0);

/// Conjugate update with known noise:
///   sigma' = (sigma^-1 + Phi'Phi / s2)^-1,  theta' = sigma' (sigma^-1 theta + Phi'r / s2).
/// Small batches (n <= d) go through the equivalent gain form, which never inverts sigma.
GaussianPosterior posterior_update(const GaussianPosterior& post, const NoiseModel& noise,
                                   std::span<const Vector> features, std::span<const double> rewards);

/// Lower factor L with L L' = sigma after symmetrisation. Falls back to an eigendecomposition with
/// eigenvalues clamped at zero when Cholesky fails.
Matrix sampling_factor(const Matrix& sigma);

/// theta ~ N(post.theta, post.sigma).
Vector posterior_sample(const GaussianPosterior& post, Rng& rng);

/// Draws reusing a precomputed factor; the agents build one per observed batch.
class GaussianSampler {
 public:
  GaussianSampler() = default;
  explicit GaussianSampler(const GaussianPosterior& post) : mean_(post.theta()), factor_(sampling_factor(post.sigma())) {}

  Vector draw(Rng& rng) const;

 private:
  Vector mean_;
  Matrix factor_;
};

/// Regularized Gram matrix V = lambda I + sum phi phi' and b = sum phi r.
struct DesignState {
  Matrix v;
  Vector b;
  double lambda = 1.0;

  std::size_t dim() const { return static_cast<std::size_t>(b.size()); }
};

DesignState design_reset(std::size_t d, double lambda);
DesignState design_update(const DesignState& state, std::span<const Vector> features, std::span<const double> rewards);

/// V^-1 b by Cholesky solve.
Vector ols_estimate(const DesignState& state);

struct Prediction {
  double mean = 0.0;
  double var = 0.0;
};

/// mean = phi' theta, var = phi' sigma phi.
Prediction predictive_mean_var(const GaussianPosterior& post, const Vector& phi);
/// mean = phi' theta_hat, var = phi' V^-1 phi.
Prediction predictive_mean_var(const DesignState& state, const Vector& phi);

/// Symmetric part (A + A') / 2.
Matrix symmetrized(const Matrix& a);

}  // namespace adaptexp
