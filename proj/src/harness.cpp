#include "adaptexp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "adaptexp/errors.hpp"
#include "adaptexp/ingestion.hpp"

namespace adaptexp {

namespace {

constexpr std::size_t kReactAttempts = 100;

FeatureMap effective_map(const AgentConfig& agent, std::size_t k) {
  if (agent.kind == AgentKind::Uniform || agent.kind == AgentKind::MabTS || agent.kind == AgentKind::MabTTTS) {
    return FeatureMap::arm_one_hot(k);
  }
  return agent.feature_map;
}

void check_dimensions(const Environment& env, const FeatureMap& map, AgentKind kind) {
  if (kind == AgentKind::Uniform) return;
  if (map.arms != env.arms()) {
    throw ConfigError("agent.feature_map", "map is built for " + std::to_string(map.arms) + " arms, environment has " +
                                               std::to_string(env.arms()));
  }
  if (map.uses_context() && map.input_dim() != env.context_dim()) {
    throw ConfigError("agent.feature_map", "map expects contexts of length " + std::to_string(map.input_dim()) +
                                               ", environment emits " + std::to_string(env.context_dim()));
  }
  if (map.temporal() && map.epochs != env.spec().schedule.t_total) {
    throw ConfigError("agent.feature_map", "map covers " + std::to_string(map.epochs) + " epochs, schedule has " +
                                               std::to_string(env.spec().schedule.t_total));
  }
}

const SiteData& site_data(const EnvironmentSpec& env) {
  const auto* params = std::get_if<BootstrapSiteParams>(&env.family);
  if (!params) throw ConfigError("objectives", "sign_generalization needs a bootstrap_site environment");
  return params->sites;
}

FeatureMap site_map(const SiteData& sites) {
  return FeatureMap::site_select(sites.size(), static_cast<std::size_t>(sites.front().features.size()));
}

/// Ridge least squares of observed outcomes on the features of the sites that produced them.
Vector fit_site_model(const SiteData& sites, const History& history) {
  std::vector<Vector> rows;
  std::vector<double> outcomes;
  for (const auto& epoch : history) {
    for (std::size_t i = 0; i < epoch.assignments.size(); ++i) {
      rows.push_back(sites[epoch.assignments[i]].features);
      outcomes.push_back(epoch.outcomes[i]);
    }
  }
  auto design = design_reset(static_cast<std::size_t>(sites.front().features.size()), kDesignRidge);
  return ols_estimate(design_update(design, rows, outcomes));
}

std::size_t sample_assignment(const AgentState& state, const Vector& x, std::size_t epoch,
                              const AssignmentDistribution& first, std::span<const ConstraintKind> constraints,
                              const Usage& usage, Rng& rng, bool& infeasible) {
  if (constraints.empty()) return rng.categorical(first.probs);
  auto masked = apply_constraints(constraints, first, usage);
  if (masked.status == ConstraintStatus::Infeasible) {
    infeasible = true;
    return 0;
  }
  // A point-mass policy whose pick is forbidden is asked again; each call draws afresh.
  for (std::size_t attempt = 0; attempt < kReactAttempts && masked.status == ConstraintStatus::NoMass; ++attempt) {
    auto retry = apply_constraints(constraints, act(state, x, epoch, rng), usage);
    if (retry.status == ConstraintStatus::Ok) masked = std::move(retry);
  }
  return rng.categorical(masked.dist.probs);
}

std::vector<std::string> find_violations(std::span<const ConstraintKind> constraints, const Usage& usage) {
  std::vector<std::string> out;
  for (const auto& c : constraints) {
    if (c.tag == ConstraintKindTag::SingleSample) {
      for (std::size_t a = 0; a < usage.counts.size(); ++a) {
        if (usage.counts[a] > 1) {
          out.push_back("single_sample: arm " + std::to_string(a) + " sampled " + std::to_string(usage.counts[a]) +
                        " times");
        }
      }
    } else if (usage.spend > c.budget) {
      out.push_back("budget: spent " + format_double(usage.spend) + " of " + format_double(c.budget));
    }
  }
  return out;
}

double score_objective(const ObjectiveSpec& objective, const RunRecord& record, std::span<const std::size_t> ranking,
                       const std::function<double()>& sign_score) {
  switch (objective.kind) {
    case ObjectiveKind::SimpleRegret: {
      RunRecord single = record;
      single.final_assignments.assign(record.post_contexts.size(), ranking.front());
      return simple_regret(single);
    }
    case ObjectiveKind::PolicyRegret: return policy_regret(record);
    case ObjectiveKind::CumulativeRegret: return cumulative_regret(record);
    case ObjectiveKind::TopKRegret: {
      RunRecord top = record;
      top.selected_subset.assign(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(objective.k));
      return top_k_regret(top, objective.k);
    }
    case ObjectiveKind::BestArmIdRate: return best_arm_id_rate(std::span<const RunRecord>(&record, 1));
    case ObjectiveKind::SignGeneralization: return sign_score();
  }
  throw ContractError("unhandled objective");
}

}  // namespace

std::string to_string(Task task) { return task == Task::Bandit ? "bandit" : "external_validity"; }

Task task_from_string(const std::string& name) {
  if (name == "bandit") return Task::Bandit;
  if (name == "external_validity") return Task::ExternalValidity;
  throw ConfigError("task", "unknown task '" + name + "' (expected bandit or external_validity)");
}

bool AgentEntry::is_uniform() const {
  return design ? *design == DesignMethod::Uniform : config.kind == AgentKind::Uniform;
}

void validate(const BenchmarkConfig& config) {
  if (config.replications < 1) throw ConfigError("replications", "must be at least 1");
  if (config.agents.empty()) throw ConfigError("agents", "at least one agent is required");
  if (config.objectives.empty()) throw ConfigError("objectives", "at least one objective is required");
  const Environment env(config.environment);
  const std::size_t k = env.arms();
  std::set<std::string> names;
  for (std::size_t i = 0; i < config.agents.size(); ++i) {
    const auto& entry = config.agents[i];
    const std::string field = "agents[" + std::to_string(i) + "]";
    if (entry.name.empty() || entry.name.find_first_of(",\n\r") != std::string::npos) {
      throw ConfigError(field + ".name", "must be non-empty and free of commas and newlines");
    }
    if (!names.insert(entry.name).second) throw ConfigError(field + ".name", "duplicate agent name '" + entry.name + "'");
    if (config.task == Task::ExternalValidity) {
      if (!entry.design) throw ConfigError(field + ".method", "external_validity agents are site-selection methods");
      continue;
    }
    if (entry.design) throw ConfigError(field + ".method", "site-selection methods belong to the external_validity task");
    AgentConfig agent = entry.config;
    if (agent.kind == AgentKind::BudgetTS && agent.costs.empty()) {
      if (env.costs().empty()) throw ConfigError(field + ".costs", "budget_ts needs arm costs from the agent or environment");
      agent.costs = env.costs();
    }
    try {
      validate(agent, k);
      check_dimensions(env, effective_map(agent, k), agent.kind);
    } catch (const ConfigError& e) {
      throw ConfigError(field, e.what());
    }
  }
  for (std::size_t j = 0; j < config.objectives.size(); ++j) {
    const auto& o = config.objectives[j];
    const std::string field = "objectives[" + std::to_string(j) + "]";
    if (o.kind == ObjectiveKind::TopKRegret && (o.k < 1 || o.k > k)) {
      throw ConfigError(field + ".k", "must lie in [1, " + std::to_string(k) + "]");
    }
    if (o.kind == ObjectiveKind::SignGeneralization) {
      site_data(config.environment);
    } else if (config.task == Task::ExternalValidity) {
      throw ConfigError(field, "the external_validity task scores sign_generalization only");
    }
  }
  for (std::size_t j = 0; j < config.constraints.size(); ++j) {
    const auto& c = config.constraints[j];
    const std::string field = "constraints[" + std::to_string(j) + "]";
    if (config.task == Task::ExternalValidity) throw ConfigError(field, "the external_validity task takes a site_budget");
    if (c.tag == ConstraintKindTag::Budget) {
      if (!(c.budget > 0.0)) throw ConfigError(field + ".total", "must be positive");
      if (env.costs().empty()) throw ConfigError(field, "a budget constraint needs environment costs");
    }
  }
  if (config.task == Task::ExternalValidity) {
    if (!std::holds_alternative<BootstrapSiteParams>(config.environment.family)) {
      throw ConfigError("environment.family", "the external_validity task needs a bootstrap_site environment");
    }
    if (config.site_budget < 1 || config.site_budget >= k) {
      throw ConfigError("site_budget", "must lie in [1, " + std::to_string(k - 1) + "] so some sites stay unsampled");
    }
  }
}

ReplicationSeeds replication_seeds(std::uint64_t master, const std::string& agent_name, std::size_t replication) {
  return ReplicationSeeds{combine_seed(master, stream::kEnvironment, replication),
                          combine_seed(master, stable_hash(agent_name), replication)};
}

ReplicationResult run_replication(const EnvironmentSpec& env_spec, const AgentConfig& agent_config,
                                  std::span<const ObjectiveSpec> objectives, std::span<const ConstraintKind> constraints,
                                  ReplicationSeeds seeds, EpochMode mode) {
  EnvironmentSpec spec = env_spec;
  spec.seed = seeds.environment;
  Environment env(std::move(spec));
  const std::size_t k = env.arms();

  AgentConfig config = agent_config;
  if (config.kind == AgentKind::BudgetTS && config.costs.empty()) config.costs = env.costs();
  const FeatureMap map = effective_map(config, k);
  check_dimensions(env, map, config.kind);
  AgentState state = agent_reset(config, k, config.kind == AgentKind::Uniform ? 0 : map.dim());

  Rng rng(seeds.agent);
  Usage usage = Usage::start(k, env.costs());
  EpochBatch batch = env.reset();
  while (!env.terminal()) {
    const auto dists = act_batch(state, batch.contexts, batch.epoch, rng);
    std::vector<std::size_t> assignments;
    assignments.reserve(batch.contexts.size());
    bool infeasible = false;
    for (std::size_t i = 0; i < batch.contexts.size(); ++i) {
      const std::size_t a =
          sample_assignment(state, batch.contexts[i], batch.epoch, dists[i], constraints, usage, rng, infeasible);
      if (infeasible) break;
      usage.record(a);
      assignments.push_back(a);
    }
    if (assignments.empty() && infeasible) {
      env.terminate();
      break;
    }
    StepResult result = infeasible ? env.step_truncated(assignments) : env.step(assignments);
    const std::span<const Vector> seen(batch.contexts.data(), assignments.size());
    state = observe(state, seen, assignments, result.outcomes, batch.epoch);
    if (result.next) batch = std::move(*result.next);
  }

  PostExperiment post = env.post_experiment_eval();
  const std::size_t last_epoch = env.spec().schedule.t_total - 1;
  ReplicationResult out;
  out.record.history = std::make_shared<const History>(env.history());
  out.record.final_assignments = exploit(state, post.contexts, mode, last_epoch).arms;
  out.record.post_contexts = std::move(post.contexts);
  out.record.oracle = std::move(post.oracle);
  out.record.violations = find_violations(constraints, usage);
  out.ranking = rank_arms(state, out.record.post_contexts, mode, last_epoch);

  auto sign_score = [&]() {
    const SiteData& sites = site_data(env.spec());
    std::set<std::size_t> sampled;
    for (const auto& epoch : *out.record.history) sampled.insert(epoch.assignments.begin(), epoch.assignments.end());
    return sign_generalization_score(sampled, sites, fit_site_model(sites, *out.record.history), site_map(sites));
  };
  for (const auto& objective : objectives) {
    out.scores.push_back(score_objective(objective, out.record, out.ranking, sign_score));
  }
  return out;
}

ReplicationResult run_replication(const EnvironmentSpec& env, const AgentConfig& agent,
                                  std::span<const ObjectiveSpec> objectives, std::span<const ConstraintKind> constraints,
                                  std::uint64_t seed, EpochMode mode) {
  return run_replication(env, agent, objectives, constraints, replication_seeds(seed, to_string(agent.kind), 0), mode);
}

ReplicationResult run_design_replication(const EnvironmentSpec& env, DesignMethod method, std::size_t budget,
                                         std::span<const ObjectiveSpec> objectives, ReplicationSeeds seeds) {
  const SiteData& sites = site_data(env);
  Rng rng(combine_seed(seeds.environment, seeds.agent, 0));
  const DesignRun run = run_design_selection(sites, budget, method, rng);
  const std::set<std::size_t> sampled(run.order.begin(), run.order.end());

  ReplicationResult out;
  auto history = std::make_shared<History>();
  for (std::size_t i = 0; i < run.order.size(); ++i) {
    history->push_back(EpochRecord{i, {}, {run.order[i]}, {run.observed_ates[i]}});
  }
  out.record.history = std::move(history);
  out.record.selected_subset = run.order;
  for (const auto& objective : objectives) {
    if (objective.kind != ObjectiveKind::SignGeneralization) {
      throw ConfigError("objectives", "the external_validity task scores sign_generalization only");
    }
    out.scores.push_back(sign_generalization_score(sampled, sites, run.model, site_map(sites)));
  }
  return out;
}

AggregateRow summarize(std::string agent, std::string objective, std::vector<double> values) {
  if (values.empty()) throw ContractError("summarize needs at least one value");
  AggregateRow row;
  row.agent = std::move(agent);
  row.objective = std::move(objective);
  const double n = static_cast<double>(values.size());
  row.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean) * (v - row.mean);
    row.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  row.ci_lo = row.mean - 1.96 * row.se;
  row.ci_hi = row.mean + 1.96 * row.se;
  row.ratio_to_uniform = std::numeric_limits<double>::quiet_NaN();
  row.values = std::move(values);
  return row;
}

const AggregateRow& AggregateReport::at(const std::string& agent, const std::string& objective) const {
  for (const auto& row : rows) {
    if (row.agent == agent && row.objective == objective) return row;
  }
  throw InvalidInput("report has no row for (" + agent + ", " + objective + ")");
}

void write_report(std::ostream& out, const AggregateReport& report) {
  out << kReportHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.agent << ',' << r.objective << ',' << format_double(r.mean) << ',' << format_double(r.se) << ','
        << format_double(r.ci_lo) << ',' << format_double(r.ci_hi) << ','
        << (std::isnan(r.ratio_to_uniform) ? std::string("nan") : format_double(r.ratio_to_uniform)) << '\n';
  }
}

AggregateReport run_benchmark(BenchmarkConfig config) {
  if (config.normalize_to_uniform &&
      std::none_of(config.agents.begin(), config.agents.end(), [](const AgentEntry& e) { return e.is_uniform(); })) {
    AgentEntry uniform;
    uniform.name = "uniform";
    if (config.task == Task::ExternalValidity) uniform.design = DesignMethod::Uniform;
    config.agents.push_back(std::move(uniform));
  }
  validate(config);

  std::ofstream file;
  if (!config.output.empty()) {
    file.open(config.output, std::ios::out | std::ios::trunc);
    if (!file) throw IoError("cannot write report to '" + config.output.string() + "'");
  }

  const std::size_t n_obj = config.objectives.size();
  AggregateReport report;
  std::vector<std::vector<std::vector<double>>> values(config.agents.size());
  for (std::size_t g = 0; g < config.agents.size(); ++g) {
    const auto& entry = config.agents[g];
    values[g].assign(n_obj, std::vector<double>(config.replications));
    for (std::size_t r = 0; r < config.replications; ++r) {
      const auto seeds = replication_seeds(config.seed, entry.name, r);
      const auto result =
          entry.design ? run_design_replication(config.environment, *entry.design, config.site_budget,
                                                config.objectives, seeds)
                       : run_replication(config.environment, entry.config, config.objectives, config.constraints, seeds,
                                         config.exploit_mode);
      for (std::size_t j = 0; j < n_obj; ++j) values[g][j][r] = result.scores[j];
    }
  }

  const auto uniform_it =
      std::find_if(config.agents.begin(), config.agents.end(), [](const AgentEntry& e) { return e.is_uniform(); });
  for (std::size_t g = 0; g < config.agents.size(); ++g) {
    for (std::size_t j = 0; j < n_obj; ++j) {
      auto row = summarize(config.agents[g].name, config.objectives[j].label(), values[g][j]);
      if (uniform_it != config.agents.end()) {
        const auto& base = values[static_cast<std::size_t>(uniform_it - config.agents.begin())][j];
        if (config.normalization == Normalization::RatioOfMeans) {
          const double base_mean = std::accumulate(base.begin(), base.end(), 0.0) / static_cast<double>(base.size());
          if (base_mean != 0.0) row.ratio_to_uniform = row.mean / base_mean;
        } else if (std::none_of(base.begin(), base.end(), [](double v) { return v == 0.0; })) {
          double total = 0.0;
          for (std::size_t r = 0; r < base.size(); ++r) total += row.values[r] / base[r];
          row.ratio_to_uniform = total / static_cast<double>(base.size());
        }
      }
      report.rows.push_back(std::move(row));
    }
  }

  if (file.is_open()) {
    write_report(file, report);
    if (!file) throw IoError("failed while writing '" + config.output.string() + "'");
  }
  return report;
}

}  // namespace adaptexp
