#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "adaptexp/linear_model.hpp"
#include "adaptexp/random.hpp"

namespace adaptexp {

enum class AgentKind { Uniform, LinearTS, LinearTTTS, LinearUCB, LinearEI, BudgetTS, MabTS, MabTTTS };

std::string to_string(AgentKind kind);
AgentKind agent_kind_from_string(const std::string& name);
/// Registry order; the CLI prints these names.
const std::vector<AgentKind>& all_agent_kinds();

/// pi(. | x, H_t): arm probabilities, nonnegative and summing to 1 within 1e-9.
struct AssignmentDistribution {
  std::vector<double> probs;

  static AssignmentDistribution uniform(std::size_t k);
  static AssignmentDistribution point_mass(std::size_t k, std::size_t arm);
  bool valid(double tol = 1e-9) const;
};

struct AgentConfig {
  AgentKind kind = AgentKind::Uniform;
  FeatureMap feature_map;
  double beta = 0.5;    // TTTS leader probability, (0, 1]
  double alpha = 1.0;   // UCB width, >= 0
  std::function<double(std::size_t epoch)> alpha_schedule;  // overrides alpha when set
  std::size_t ts_draws = 1000;
  std::vector<double> costs;  // BudgetTS per-arm costs
  double prior_var = 1.0;     // tau^2 in N(0, tau^2 I)
  double noise_s2 = 1.0;      // assumed outcome noise
  double ridge = 1.0;         // UCB design lambda
  bool draw_per_batch = false;  // TS family: one theta draw shared by a whole batch
};

/// Validates a config against K; throws ConfigError.
void validate(const AgentConfig& config, std::size_t k);

struct UniformTally {
  std::vector<double> sums;
  std::vector<std::size_t> counts;
};

struct PosteriorModel {
  GaussianPosterior posterior;
  NoiseModel noise;
  GaussianSampler sampler;
};

struct DesignModel {
  DesignState design;
  Vector theta_hat;
  Eigen::LLT<Matrix> v_factor;
};

/// Summary statistics condensing the history. Treated as an immutable value: observe returns a new one.
struct AgentState {
  AgentConfig config;
  FeatureMap map;  // effective map (ArmOneHot for the MAB kinds)
  std::size_t arms = 0;
  std::size_t observations = 0;
  std::variant<UniformTally, PosteriorModel, DesignModel> model;
};

AgentState agent_reset(const AgentConfig& config, std::size_t k, std::size_t d);

/// Replaces the posterior of a posterior-backed state (tests and warm starts).
AgentState with_posterior(const AgentState& state, GaussianPosterior posterior);

AssignmentDistribution act(const AgentState& state, const Vector& context, std::size_t epoch, Rng& rng);

/// Per-unit distributions for a whole batch. Identical to calling act per unit unless draw_per_batch is set.
std::vector<AssignmentDistribution> act_batch(const AgentState& state, std::span<const Vector> contexts,
                                              std::size_t epoch, Rng& rng);

/// Monte-Carlo estimate of P(arm a is optimal) from `draws` posterior samples (TS family), used for reporting.
AssignmentDistribution optimal_arm_probabilities(const AgentState& state, const Vector& context, std::size_t epoch,
                                                 Rng& rng, std::optional<std::size_t> draws = std::nullopt);

AgentState observe(const AgentState& state, std::span<const Vector> contexts, std::span<const std::size_t> assignments,
                   std::span<const double> outcomes, std::size_t epoch);

enum class EpochMode { TerminalAverage, PerEpoch };

struct ExploitResult {
  std::vector<std::size_t> arms;
  bool fallback = false;  // Uniform agent had no observations; arm 0 returned
};

/// Per-context argmax of the predicted reward. Ties go to the lowest arm index.
ExploitResult exploit(const AgentState& state, std::span<const Vector> contexts, EpochMode mode,
                      std::size_t epoch = 0);

/// Arms ordered by predicted reward averaged over `contexts`, best first (best-arm and top-k selection).
std::vector<std::size_t> rank_arms(const AgentState& state, std::span<const Vector> contexts, EpochMode mode,
                                   std::size_t epoch = 0);

/// Expected-improvement index sigma * (z Phi(z) + phi(z)), z = (m - m_best) / sigma.
double expected_improvement(double mean, double sd, double best_mean);

/// Predicted reward of each arm for one context under the state's point estimate.
std::vector<double> predicted_rewards(const AgentState& state, const Vector& context, EpochMode mode,
                                      std::size_t epoch = 0);

}  // namespace adaptexp
