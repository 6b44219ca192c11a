#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "adaptexp/agents.hpp"
#include "adaptexp/environments.hpp"

namespace adaptexp {

enum class ObjectiveKind { SimpleRegret, PolicyRegret, CumulativeRegret, TopKRegret, BestArmIdRate, SignGeneralization };

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);
const std::vector<ObjectiveKind>& all_objective_kinds();

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::SimpleRegret;
  std::size_t k = 1;  // TopKRegret subset size

  std::string label() const;
};

enum class ConstraintKindTag { SingleSample, Budget };

struct ConstraintKind {
  ConstraintKindTag tag = ConstraintKindTag::SingleSample;
  double budget = 0.0;  // Budget total, > 0

  static ConstraintKind single_sample() { return {ConstraintKindTag::SingleSample, 0.0}; }
  static ConstraintKind budget_total(double total) { return {ConstraintKindTag::Budget, total}; }
};

std::string to_string(const ConstraintKind& kind);

/// What the run has consumed so far.
struct Usage {
  std::vector<std::size_t> counts;
  std::vector<double> costs;  // per-arm cost (empty: every arm costs 0)
  double spend = 0.0;

  static Usage start(std::size_t k, std::vector<double> costs = {});
  void record(std::size_t arm);
};

enum class ConstraintStatus {
  Ok,          // mass remained after masking; dist is the renormalized distribution
  NoMass,      // the policy's mass sat on forbidden arms only; dist is uniform over the allowed arms
  Infeasible,  // no arm is allowed; sampling must stop
};

struct ConstrainedDistribution {
  ConstraintStatus status = ConstraintStatus::Ok;
  AssignmentDistribution dist;

  bool feasible() const { return status != ConstraintStatus::Infeasible; }
};

/// Arms every constraint still allows given the usage so far.
std::vector<bool> allowed_arms(std::span<const ConstraintKind> kinds, const Usage& usage, std::size_t k);

/// Zeroes forbidden arms and renormalizes.
ConstrainedDistribution apply_constraint(const ConstraintKind& kind, const AssignmentDistribution& dist,
                                         const Usage& usage);
/// Joint mask over several constraints.
ConstrainedDistribution apply_constraints(std::span<const ConstraintKind> kinds, const AssignmentDistribution& dist,
                                          const Usage& usage);

struct RunRecord {
  std::shared_ptr<const History> history;
  std::vector<Vector> post_contexts;
  std::vector<std::size_t> final_assignments;  // length N, one per post context
  std::vector<std::size_t> selected_subset;    // top-k selection
  MeanOracle oracle;
  std::vector<std::string> violations;
};

/// max_a mean_i r(x_i, a) - mean_i r(x_i, chosen). Requires one arm replicated over all contexts.
double simple_regret(const RunRecord& record);
/// mean_i max_a r(x_i, a) - mean_i r(x_i, A_i).
double policy_regret(const RunRecord& record);
/// sum_t sum_i max_a r_t(x_i, a) - r_t(x_i, A_i) over the history with epoch-t means.
double cumulative_regret(const RunRecord& record);
/// Sum of the k best mean values minus the sum over the selected subset.
double top_k_regret(const RunRecord& record, std::size_t k);
/// Fraction of (replication, context) pairs whose final arm is the oracle argmax.
double best_arm_id_rate(std::span<const RunRecord> records);

/// Fraction of unsampled sites whose predicted ATE sign matches the true sign. A zero true ATE counts
/// only when the prediction is within 1e-12 of zero.
double sign_generalization_score(const std::set<std::size_t>& sampled_sites, const SiteData& sites,
                                 const Vector& model, const FeatureMap& map);

}  // namespace adaptexp
