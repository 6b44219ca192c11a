#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adaptexp/agents.hpp"
#include "adaptexp/environments.hpp"
#include "adaptexp/objectives.hpp"
#include "adaptexp/optimal_design.hpp"

namespace adaptexp {

enum class Task { Bandit, ExternalValidity };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

/// How ratio_to_uniform is formed.
enum class Normalization { RatioOfMeans, PerReplication };

/// A named policy. In the external-validity task the entry is a site-selection method instead.
struct AgentEntry {
  std::string name;
  AgentConfig config;
  std::optional<DesignMethod> design;

  bool is_uniform() const;
};

struct BenchmarkConfig {
  Task task = Task::Bandit;
  EnvironmentSpec environment;
  std::vector<AgentEntry> agents;
  std::vector<ObjectiveSpec> objectives;
  std::vector<ConstraintKind> constraints;
  std::size_t replications = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output;
  bool normalize_to_uniform = false;
  Normalization normalization = Normalization::RatioOfMeans;
  EpochMode exploit_mode = EpochMode::TerminalAverage;
  std::size_t site_budget = 0;  // external-validity task
};

/// Throws ConfigError naming the offending field.
void validate(const BenchmarkConfig& config);

/// Parses a JSON document. Relative paths inside it resolve against `base_dir`.
BenchmarkConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
BenchmarkConfig load_config(const std::filesystem::path& path);

struct ReplicationSeeds {
  std::uint64_t environment = 0;
  std::uint64_t agent = 0;
};

/// Environment seeds depend on (master, replication) only, so every agent faces the same instances.
/// Agent seeds mix in a hash of the agent name.
ReplicationSeeds replication_seeds(std::uint64_t master, const std::string& agent_name, std::size_t replication);

struct ReplicationResult {
  RunRecord record;
  std::vector<std::size_t> ranking;  // arms best-first under the final state
  std::vector<double> scores;        // one per objective
};

/// reset, then per epoch: act per unit, mask by constraints, sample, step, observe; then exploit and score.
ReplicationResult run_replication(const EnvironmentSpec& env, const AgentConfig& agent,
                                  std::span<const ObjectiveSpec> objectives, std::span<const ConstraintKind> constraints,
                                  ReplicationSeeds seeds, EpochMode mode = EpochMode::TerminalAverage);
ReplicationResult run_replication(const EnvironmentSpec& env, const AgentConfig& agent,
                                  std::span<const ObjectiveSpec> objectives, std::span<const ConstraintKind> constraints,
                                  std::uint64_t seed, EpochMode mode = EpochMode::TerminalAverage);

/// Site-selection replication: choose `budget` sites, bootstrap one ATE at each, score the fitted model.
ReplicationResult run_design_replication(const EnvironmentSpec& env, DesignMethod method, std::size_t budget,
                                         std::span<const ObjectiveSpec> objectives, ReplicationSeeds seeds);

struct AggregateRow {
  std::string agent;
  std::string objective;
  double mean = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double ratio_to_uniform = 0.0;  // NaN when undefined
  std::vector<double> values;     // per replication
};

/// Mean, standard error and a 95% normal interval.
AggregateRow summarize(std::string agent, std::string objective, std::vector<double> values);

struct AggregateReport {
  std::vector<AggregateRow> rows;

  const AggregateRow& at(const std::string& agent, const std::string& objective) const;
};

inline constexpr const char* kReportHeader = "agent,objective,mean,se,ci_lo,ci_hi,ratio_to_uniform";

void write_report(std::ostream& out, const AggregateReport& report);

/// Runs every agent for R replications and writes the CSV report when `config.output` is set.
AggregateReport run_benchmark(BenchmarkConfig config);

/// Subcommands run, validate, list-agents, list-envs, list-objectives.
/// Exit codes: 0 ok, 1 usage, 2 configuration, 3 runtime.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adaptexp
