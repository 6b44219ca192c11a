#include "adaptexp/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "adaptexp/errors.hpp"

namespace adaptexp {

namespace {

double best_of(const MeanOracle& oracle, const Vector& x) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < oracle.arms; ++a) best = std::max(best, oracle.post_mean(x, a));
  return best;
}

/// Per-arm mean over the post-experiment population.
std::vector<double> population_means(const RunRecord& record) {
  std::vector<double> means(record.oracle.arms, 0.0);
  if (record.post_contexts.empty()) throw ContractError("run record has no post-experiment contexts");
  for (const auto& x : record.post_contexts) {
    for (std::size_t a = 0; a < means.size(); ++a) means[a] += record.oracle.post_mean(x, a);
  }
  for (auto& m : means) m /= static_cast<double>(record.post_contexts.size());
  return means;
}

void check_assignments(const RunRecord& record) {
  if (record.final_assignments.size() != record.post_contexts.size()) {
    throw ContractError("final assignments (" + std::to_string(record.final_assignments.size()) +
                        ") do not cover the post-experiment contexts (" + std::to_string(record.post_contexts.size()) + ")");
  }
  for (std::size_t a : record.final_assignments) {
    if (a >= record.oracle.arms) throw ContractError("final assignment out of arm range");
  }
}

}  // namespace

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::SimpleRegret: return "simple_regret";
    case ObjectiveKind::PolicyRegret: return "policy_regret";
    case ObjectiveKind::CumulativeRegret: return "cumulative_regret";
    case ObjectiveKind::TopKRegret: return "top_k_regret";
    case ObjectiveKind::BestArmIdRate: return "best_arm_id_rate";
    case ObjectiveKind::SignGeneralization: return "sign_generalization";
  }
  return "unknown";
}

const std::vector<ObjectiveKind>& all_objective_kinds() {
  static const std::vector<ObjectiveKind> kinds{ObjectiveKind::SimpleRegret,     ObjectiveKind::PolicyRegret,
                                                ObjectiveKind::CumulativeRegret, ObjectiveKind::TopKRegret,
                                                ObjectiveKind::BestArmIdRate,    ObjectiveKind::SignGeneralization};
  return kinds;
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
  for (auto k : all_objective_kinds()) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("objectives", "unknown objective '" + name + "'");
}

std::string ObjectiveSpec::label() const {
  if (kind == ObjectiveKind::TopKRegret) return to_string(kind) + "@" + std::to_string(k);
  return to_string(kind);
}

std::string to_string(const ConstraintKind& kind) {
  return kind.tag == ConstraintKindTag::SingleSample ? "single_sample" : "budget";
}

Usage Usage::start(std::size_t k, std::vector<double> costs) {
  return Usage{std::vector<std::size_t>(k, 0), std::move(costs), 0.0};
}

void Usage::record(std::size_t arm) {
  ++counts.at(arm);
  if (!costs.empty()) spend += costs.at(arm);
}

std::vector<bool> allowed_arms(std::span<const ConstraintKind> kinds, const Usage& usage, std::size_t k) {
  std::vector<bool> allowed(k, true);
  for (const auto& kind : kinds) {
    for (std::size_t a = 0; a < k; ++a) {
      if (kind.tag == ConstraintKindTag::SingleSample) {
        if (a < usage.counts.size() && usage.counts[a] > 0) allowed[a] = false;
      } else {
        const double cost = usage.costs.empty() ? 0.0 : usage.costs.at(a);
        if (cost > kind.budget - usage.spend) allowed[a] = false;
      }
    }
  }
  return allowed;
}

ConstrainedDistribution apply_constraints(std::span<const ConstraintKind> kinds, const AssignmentDistribution& dist,
                                          const Usage& usage) {
  const std::size_t k = dist.probs.size();
  const auto allowed = allowed_arms(kinds, usage, k);
  const auto n_allowed = static_cast<std::size_t>(std::count(allowed.begin(), allowed.end(), true));
  ConstrainedDistribution out;
  out.dist.probs.assign(k, 0.0);
  if (n_allowed == 0) {
    out.status = ConstraintStatus::Infeasible;
    return out;
  }
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    if (allowed[a]) {
      out.dist.probs[a] = dist.probs[a];
      total += dist.probs[a];
    }
  }
  if (total > 0.0) {
    for (auto& p : out.dist.probs) p /= total;
    return out;
  }
  out.status = ConstraintStatus::NoMass;
  for (std::size_t a = 0; a < k; ++a) out.dist.probs[a] = allowed[a] ? 1.0 / static_cast<double>(n_allowed) : 0.0;
  return out;
}

ConstrainedDistribution apply_constraint(const ConstraintKind& kind, const AssignmentDistribution& dist,
                                         const Usage& usage) {
  return apply_constraints(std::span<const ConstraintKind>(&kind, 1), dist, usage);
}

double simple_regret(const RunRecord& record) {
  check_assignments(record);
  const std::size_t chosen = record.final_assignments.front();
  if (std::any_of(record.final_assignments.begin(), record.final_assignments.end(),
                  [chosen](std::size_t a) { return a != chosen; })) {
    throw ContractError("simple regret needs a single final arm; got heterogeneous assignments");
  }
  const auto means = population_means(record);
  return std::max(*std::max_element(means.begin(), means.end()) - means[chosen], 0.0);
}

double policy_regret(const RunRecord& record) {
  check_assignments(record);
  double total = 0.0;
  for (std::size_t i = 0; i < record.post_contexts.size(); ++i) {
    const auto& x = record.post_contexts[i];
    total += best_of(record.oracle, x) - record.oracle.post_mean(x, record.final_assignments[i]);
  }
  return std::max(total / static_cast<double>(record.post_contexts.size()), 0.0);
}

double cumulative_regret(const RunRecord& record) {
  if (!record.history) return 0.0;
  double total = 0.0;
  for (const auto& epoch : *record.history) {
    for (std::size_t i = 0; i < epoch.assignments.size(); ++i) {
      const auto& x = epoch.contexts[i];
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < record.oracle.arms; ++a) best = std::max(best, record.oracle.epoch_mean(epoch.epoch, x, a));
      total += best - record.oracle.epoch_mean(epoch.epoch, x, epoch.assignments[i]);
    }
  }
  return std::max(total, 0.0);
}

double top_k_regret(const RunRecord& record, std::size_t k) {
  const auto means = population_means(record);
  if (k < 1 || k > means.size()) throw ContractError("top-k size must lie in [1, K]");
  const std::set<std::size_t> unique(record.selected_subset.begin(), record.selected_subset.end());
  if (record.selected_subset.size() != k || unique.size() != k) {
    throw ContractError("top-k selection must contain exactly " + std::to_string(k) + " distinct arms");
  }
  std::vector<double> sorted = means;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double best = 0.0, chosen = 0.0;
  for (std::size_t i = 0; i < k; ++i) best += sorted[i];
  for (std::size_t a : record.selected_subset) {
    if (a >= means.size()) throw ContractError("top-k selection contains an arm out of range");
    chosen += means[a];
  }
  return std::max(best - chosen, 0.0);
}

double best_arm_id_rate(std::span<const RunRecord> records) {
  if (records.empty()) throw ContractError("best-arm identification rate needs at least one record");
  std::size_t hits = 0, total = 0;
  for (const auto& record : records) {
    check_assignments(record);
    for (std::size_t i = 0; i < record.post_contexts.size(); ++i) {
      const auto& x = record.post_contexts[i];
      std::size_t best = 0;
      double best_value = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < record.oracle.arms; ++a) {
        const double v = record.oracle.post_mean(x, a);
        if (v > best_value) {
          best_value = v;
          best = a;
        }
      }
      hits += record.final_assignments[i] == best ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

double sign_generalization_score(const std::set<std::size_t>& sampled_sites, const SiteData& sites,
                                 const Vector& model, const FeatureMap& map) {
  std::size_t held_out = 0, correct = 0;
  const auto p = static_cast<Eigen::Index>(map.context_dim);
  for (std::size_t a = 0; a < sites.size(); ++a) {
    if (sampled_sites.contains(a)) continue;
    ++held_out;
    if (sites[a].features.size() != p || model.size() != p) {
      throw InvalidInput("sign generalization: feature/model length mismatch at site " + std::to_string(a));
    }
    const double predicted = sites[a].features.dot(model);
    const double truth = sites[a].true_ate();
    bool ok = false;
    if (truth > 0.0) ok = predicted > 0.0;
    else if (truth < 0.0) ok = predicted < 0.0;
    else ok = std::abs(predicted) <= 1e-12;
    correct += ok ? 1 : 0;
  }
  if (held_out == 0) throw ContractError("sign generalization needs at least one unsampled site");
  return static_cast<double>(correct) / static_cast<double>(held_out);
}

}  // namespace adaptexp
