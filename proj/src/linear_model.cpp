#include "adaptexp/linear_model.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "adaptexp/errors.hpp"

namespace adaptexp {

namespace {

constexpr double kSymmetryTol = 1e-10;

void require_dim(std::size_t expected, std::size_t actual, const char* what) {
  if (expected != actual) {
    throw InvalidInput(std::string(what) + ": expected length " + std::to_string(expected) + ", got " +
                       std::to_string(actual));
  }
}

double max_asymmetry(const Matrix& a) { return (a - a.transpose()).cwiseAbs().maxCoeff(); }

}  // namespace

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::ArmOneHot: return "arm_one_hot";
    case FeatureKind::PerArmInteraction: return "per_arm_interaction";
    case FeatureKind::AdditiveConfounder: return "additive_confounder";
    case FeatureKind::EpochArmOneHot: return "epoch_arm_one_hot";
    case FeatureKind::SiteSelect: return "site_select";
  }
  return "unknown";
}

FeatureKind feature_kind_from_string(const std::string& name) {
  for (auto k : {FeatureKind::ArmOneHot, FeatureKind::PerArmInteraction, FeatureKind::AdditiveConfounder,
                 FeatureKind::EpochArmOneHot, FeatureKind::SiteSelect}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("feature_map.kind", "unknown feature map kind '" + name + "'");
}

std::size_t FeatureMap::dim() const {
  switch (kind) {
    case FeatureKind::ArmOneHot: return arms;
    case FeatureKind::PerArmInteraction: return arms * context_dim;
    case FeatureKind::AdditiveConfounder: return context_dim + arms;
    case FeatureKind::EpochArmOneHot: return epochs + arms;
    case FeatureKind::SiteSelect: return context_dim;
  }
  return 0;
}

std::size_t FeatureMap::input_dim() const {
  switch (kind) {
    case FeatureKind::PerArmInteraction:
    case FeatureKind::AdditiveConfounder: return context_dim;
    case FeatureKind::SiteSelect: return arms * context_dim;
    default: return 0;
  }
}

bool FeatureMap::uses_context() const { return input_dim() > 0; }

Vector featurize(const FeatureMap& map, const Vector& context, std::size_t arm, std::size_t epoch) {
  if (arm >= map.arms) {
    throw InvalidInput("featurize: arm " + std::to_string(arm) + " out of range for K=" + std::to_string(map.arms));
  }
  if (map.uses_context()) require_dim(map.input_dim(), static_cast<std::size_t>(context.size()), "featurize context");
  const auto p = static_cast<Eigen::Index>(map.context_dim);
  const auto a = static_cast<Eigen::Index>(arm);
  Vector phi = Vector::Zero(static_cast<Eigen::Index>(map.dim()));
  switch (map.kind) {
    case FeatureKind::ArmOneHot: phi(a) = 1.0; break;
    case FeatureKind::PerArmInteraction: phi.segment(a * p, p) = context; break;
    case FeatureKind::AdditiveConfounder:
      phi.head(p) = context;
      phi(p + a) = 1.0;
      break;
    case FeatureKind::EpochArmOneHot:
      if (epoch >= map.epochs) {
        throw InvalidInput("featurize: epoch " + std::to_string(epoch) + " out of range for T=" +
                           std::to_string(map.epochs));
      }
      phi(static_cast<Eigen::Index>(epoch)) = 1.0;
      phi(static_cast<Eigen::Index>(map.epochs) + a) = 1.0;
      break;
    case FeatureKind::SiteSelect: phi = context.segment(a * p, p); break;
  }
  return phi;
}

double linear_score(const FeatureMap& map, const Vector& context, std::size_t arm, std::size_t epoch,
                    const Vector& theta) {
  const auto p = static_cast<Eigen::Index>(map.context_dim);
  const auto a = static_cast<Eigen::Index>(arm);
  switch (map.kind) {
    case FeatureKind::ArmOneHot: return theta(a);
    case FeatureKind::PerArmInteraction: return context.dot(theta.segment(a * p, p));
    case FeatureKind::AdditiveConfounder: return context.dot(theta.head(p)) + theta(p + a);
    case FeatureKind::EpochArmOneHot:
      return theta(static_cast<Eigen::Index>(epoch)) + theta(static_cast<Eigen::Index>(map.epochs) + a);
    case FeatureKind::SiteSelect: return context.segment(a * p, p).dot(theta);
  }
  return 0.0;
}

NoiseModel make_noise(double s2) {
  if (!(s2 > 0.0) || !std::isfinite(s2)) throw InvalidInput("noise variance must be positive and finite");
  return NoiseModel{s2};
}

Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

GaussianPosterior GaussianPosterior::from_moments(Vector theta, Matrix sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() != theta.size()) {
    throw InvalidInput("posterior covariance must be square and match the mean length");
  }
  if (max_asymmetry(sigma) > kSymmetryTol) throw InvalidInput("posterior covariance is not symmetric");
  if (sigma.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -kSymmetryTol) {
      throw InvalidInput("posterior covariance is not positive semi-definite");
    }
  }
  return GaussianPosterior(std::move(theta), std::move(sigma));
}

GaussianPosterior posterior_reset(const Vector& prior_mean, const Matrix& prior_cov) {
  if (prior_cov.rows() != prior_cov.cols()) throw InvalidInput("prior covariance must be square");
  require_dim(static_cast<std::size_t>(prior_cov.rows()), static_cast<std::size_t>(prior_mean.size()),
              "prior mean");
  if (!prior_mean.allFinite() || !prior_cov.allFinite()) throw InvalidInput("prior contains non-finite entries");
  if (max_asymmetry(prior_cov) > kSymmetryTol) throw InvalidInput("prior covariance is not symmetric");
  Eigen::LLT<Matrix> llt(prior_cov);
  if (llt.info() != Eigen::Success) throw InvalidInput("prior covariance is not positive definite");
  return GaussianPosterior(prior_mean, prior_cov);
}

GaussianPosterior isotropic_prior(std::size_t d, double tau2) {
  const auto n = static_cast<Eigen::Index>(d);
  return posterior_reset(Vector::Zero(n), tau2 * Matrix::Identity(n, n));
}

GaussianPosterior posterior_update(const GaussianPosterior& post, const NoiseModel& noise,
                                   std::span<const Vector> features, std::span<const double> rewards) {
  if (features.size() != rewards.size()) {
    throw InvalidInput("posterior_update: " + std::to_string(features.size()) + " feature rows but " +
                       std::to_string(rewards.size()) + " rewards");
  }
  if (features.empty()) return post;
  const std::size_t d = post.dim();
  const auto n = static_cast<Eigen::Index>(features.size());
  Matrix phi(n, static_cast<Eigen::Index>(d));
  Vector r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require_dim(d, static_cast<std::size_t>(features[i].size()), "posterior_update feature");
    if (!std::isfinite(rewards[i])) throw InvalidInput("posterior_update: non-finite reward at row " + std::to_string(i));
    phi.row(i) = features[i].transpose();
    r(i) = rewards[i];
  }
  const double s2 = noise.s2;
  const Matrix& sigma = post.sigma();
  const Vector& theta = post.theta();

  if (static_cast<std::size_t>(n) > d) {
    // Information form: precision + Phi'Phi / s2.
    Eigen::LLT<Matrix> sigma_llt(sigma);
    if (sigma_llt.info() == Eigen::Success) {
      const Matrix identity = Matrix::Identity(sigma.rows(), sigma.cols());
      const Matrix precision = symmetrized(sigma_llt.solve(identity));
      Matrix updated = precision;
      updated.noalias() += phi.transpose() * phi / s2;
      Eigen::LLT<Matrix> llt(symmetrized(updated));
      if (llt.info() != Eigen::Success) throw NumericError("posterior precision lost positive definiteness");
      const Vector rhs = precision * theta + phi.transpose() * r / s2;
      return GaussianPosterior(llt.solve(rhs), symmetrized(llt.solve(identity)));
    }
  }
  // Gain form: S = Phi sigma Phi' + s2 I, K = sigma Phi' S^-1.
  const Matrix sp = sigma * phi.transpose();  // d x n
  Matrix s = phi * sp;
  s.diagonal().array() += s2;
  Eigen::LLT<Matrix> s_llt(symmetrized(s));
  if (s_llt.info() != Eigen::Success) throw NumericError("innovation covariance is not positive definite");
  const Vector innovation = r - phi * theta;
  const Vector new_theta = theta + sp * s_llt.solve(innovation);
  const Matrix new_sigma = symmetrized(sigma - sp * s_llt.solve(sp.transpose()));
  return GaussianPosterior(new_theta, new_sigma);
}

Matrix sampling_factor(const Matrix& sigma) {
  const Matrix sym = symmetrized(sigma);
  if (sym.size() == 0) return sym;
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition of covariance failed");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Matrix factor = eig.eigenvectors() * root.asDiagonal();
  if (!factor.allFinite()) throw NumericError("covariance factor is not finite");
  return factor;
}

Vector GaussianSampler::draw(Rng& rng) const {
  Vector z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean_ + factor_ * z;
}

Vector posterior_sample(const GaussianPosterior& post, Rng& rng) { return GaussianSampler(post).draw(rng); }

DesignState design_reset(std::size_t d, double lambda) {
  if (!(lambda > 0.0)) throw InvalidInput("ridge weight lambda must be positive");
  const auto n = static_cast<Eigen::Index>(d);
  return DesignState{lambda * Matrix::Identity(n, n), Vector::Zero(n), lambda};
}

DesignState design_update(const DesignState& state, std::span<const Vector> features, std::span<const double> rewards) {
  if (features.size() != rewards.size()) {
    throw InvalidInput("design_update: " + std::to_string(features.size()) + " feature rows but " +
                       std::to_string(rewards.size()) + " rewards");
  }
  DesignState next = state;
  for (std::size_t i = 0; i < features.size(); ++i) {
    require_dim(state.dim(), static_cast<std::size_t>(features[i].size()), "design_update feature");
    next.v.noalias() += features[i] * features[i].transpose();
    next.b += rewards[i] * features[i];
  }
  return next;
}

Vector ols_estimate(const DesignState& state) {
  Eigen::LLT<Matrix> llt(state.v);
  if (llt.info() != Eigen::Success) throw NumericError("design matrix is not positive definite");
  return llt.solve(state.b);
}

Prediction predictive_mean_var(const GaussianPosterior& post, const Vector& phi) {
  require_dim(post.dim(), static_cast<std::size_t>(phi.size()), "predictive feature");
  const double var = phi.dot(post.sigma() * phi);
  return {phi.dot(post.theta()), std::max(var, 0.0)};
}

Prediction predictive_mean_var(const DesignState& state, const Vector& phi) {
  require_dim(state.dim(), static_cast<std::size_t>(phi.size()), "predictive feature");
  Eigen::LLT<Matrix> llt(state.v);
  if (llt.info() != Eigen::Success) throw NumericError("design matrix is not positive definite");
  const double var = phi.dot(llt.solve(phi));
  return {phi.dot(llt.solve(state.b)), std::max(var, 0.0)};
}

}  // namespace adaptexp
