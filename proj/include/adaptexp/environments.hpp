#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "adaptexp/linear_model.hpp"
#include "adaptexp/random.hpp"

namespace adaptexp {

/// Epoch count, per-epoch batch sizes, and post-experiment population size.
struct EpochSchedule {
  std::size_t t_total = 1;
  std::vector<std::size_t> batch_sizes{1};
  std::size_t post_n = 1;

  static EpochSchedule uniform(std::size_t epochs, std::size_t batch, std::size_t post_n);
  std::size_t total_units() const;
};

struct EpochBatch {
  std::size_t epoch = 0;
  std::vector<Vector> contexts;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<Vector> contexts;
  std::vector<std::size_t> assignments;
  std::vector<double> outcomes;
};

using History = std::vector<EpochRecord>;

/// Per-epoch arm means and variances (T x K).
struct MomentTable {
  Matrix means;
  Matrix vars;

  std::size_t epochs() const { return static_cast<std::size_t>(means.rows()); }
  std::size_t arms() const { return static_cast<std::size_t>(means.cols()); }
  /// Time-averaged arm means (1/T) sum_t theta_{t,a}.
  Vector averaged_means() const;
};

void validate(const MomentTable& table);

/// Unit-level outcomes of one site's trial.
struct Site {
  Vector features;
  std::vector<double> treated;
  std::vector<double> control;

  double true_ate() const;
};

using SiteData = std::vector<Site>;

void validate(const SiteData& sites);

/// One draw of mean(resampled treated) - mean(resampled control), resampling at original sizes.
double bootstrap_ate(const Site& site, Rng& rng);

/// Outcome = phi(x, a)' theta* + N(0, s2). theta* is drawn N(0, theta_scale^2 I) at reset if empty.
struct LinearGaussianParams {
  FeatureMap map;
  Vector theta;
  double theta_scale = 1.0;
  double noise_s2 = 1.0;
};

/// Outcome ~ N(means(t, a), vars(t, a)); contexts are empty, the epoch is the only feature.
struct MomentTableParams {
  MomentTable table;
};

/// Arms are sites; one decision per epoch; outcome is a bootstrapped ATE.
struct BootstrapSiteParams {
  SiteData sites;
};

/// Outcome = theta_a' x + N(0, s2), contexts resampled from a covariate pool.
struct PersonalizationParams {
  Matrix theta;  // K x p, row a holds theta_a
  std::vector<Vector> pool;
  double noise_s2 = 1.0;
};

using EnvironmentFamily =
    std::variant<LinearGaussianParams, MomentTableParams, BootstrapSiteParams, PersonalizationParams>;

/// Per-arm sampling costs: explicit, or drawn N(mean, variance) truncated below at `floor` at reset.
struct CostModel {
  std::vector<double> explicit_costs;
  double mean = 20.0;
  double variance = 10.0;
  double floor = 1.0;
};

struct EnvironmentSpec {
  EpochSchedule schedule;
  std::size_t k = 2;
  EnvironmentFamily family;
  std::optional<CostModel> costs;
  std::uint64_t seed = 0;
};

std::string family_name(const EnvironmentSpec& spec);

/// Throws ConfigError with a field path when the spec is internally inconsistent.
void validate(const EnvironmentSpec& spec);

/// True conditional means, for scoring only.
struct MeanOracle {
  std::size_t arms = 0;
  std::function<double(std::size_t epoch, const Vector& x, std::size_t arm)> epoch_mean;
  std::function<double(const Vector& x, std::size_t arm)> post_mean;
};

struct PostExperiment {
  std::vector<Vector> contexts;
  MeanOracle oracle;
};

struct StepResult {
  std::vector<double> outcomes;
  std::optional<EpochBatch> next;  // empty once terminal
};

class RewardProcess;

/// Single-owner environment: reset draws epoch 0, step consumes assignments for the current batch.
class Environment {
 public:
  explicit Environment(EnvironmentSpec spec);
  ~Environment();
  Environment(Environment&&) noexcept;
  Environment& operator=(Environment&&) noexcept;

  /// Restarts from the spec's seed and returns the epoch-0 batch.
  const EpochBatch& reset();
  StepResult step(std::span<const std::size_t> assignments);
  /// Steps with a prefix of the current batch and then terminates (infeasible constraints).
  StepResult step_truncated(std::span<const std::size_t> assignments);
  /// Ends the experiment without stepping the current batch.
  void terminate();

  PostExperiment post_experiment_eval();

  bool terminal() const { return terminal_; }
  std::size_t epoch() const { return epoch_; }
  const EpochBatch& current_batch() const;
  const History& history() const { return history_; }
  const EnvironmentSpec& spec() const { return spec_; }
  std::size_t arms() const { return spec_.k; }
  std::size_t context_dim() const;
  /// Realized per-arm costs (empty when the spec has no cost model).
  const std::vector<double>& costs() const { return costs_; }
  /// Ground truth for the current instance; tests and the harness use it for scoring only.
  MeanOracle oracle() const;

 private:
  StepResult advance(std::span<const std::size_t> assignments, bool truncate);
  void draw_batch();

  EnvironmentSpec spec_;
  std::shared_ptr<const RewardProcess> process_;
  Rng context_rng_;
  Rng noise_rng_;
  Rng bootstrap_rng_;
  std::uint64_t post_seed_ = 0;
  std::size_t epoch_ = 0;
  bool terminal_ = false;
  EpochBatch batch_;
  History history_;
  std::vector<double> costs_;
};

/// Extends a moment table to target_k arms. New arms copy `treatment_arm`'s column with per-epoch mean
/// shifts N(0, (scale * s_hat)^2), s_hat the std of that column across epochs; variances copied.
MomentTable augment_arms(const MomentTable& table, std::size_t target_k, double scale, Rng& rng,
                         std::size_t treatment_arm = 1);

/// Unit observed under a single arm, as found in trial data.
struct ObservedUnit {
  Vector covariates;
  std::size_t arm = 0;
  double outcome = 0.0;
};

/// Per-arm ridge (lambda = 1e-6) fits of theta_a; rows of the returned K x p matrix.
Matrix fit_per_arm_coefficients(std::span<const ObservedUnit> units, std::size_t k);

/// Builds a personalization environment from unit data: per-arm linear fits, covariates resampled.
EnvironmentSpec make_personalization_env(std::span<const ObservedUnit> units, std::size_t k, NoiseModel noise,
                                         EpochSchedule schedule = {}, std::uint64_t seed = 0);

// Synthetic generators used by the CLI tasks and the acceptance suite.

/// Sites whose true ATE is approximately features' theta; household outcomes are Gaussian around
/// site means with sd `household_sd`. Features carry an intercept in column 0.
SiteData synthetic_sites(std::size_t k, std::size_t p, const Vector& theta, std::size_t group_size,
                         double household_sd, double ate_noise_sd, Rng& rng);

/// T x K table whose per-epoch best arm alternates while one arm wins on average.
struct SignFlipOptions {
  std::size_t arms = 5;
  std::size_t epochs = 10;
  double gap = 0.5;
  double epoch_shift = 2.0;
  double variance = 4.0;
};
MomentTable sign_flip_table(const SignFlipOptions& options);

/// Standard-normal covariates with a leading intercept column.
std::vector<Vector> synthetic_pool(std::size_t size, std::size_t p, Rng& rng);

}  // namespace adaptexp
