#include <ostream>

#include <CLI11.hpp>

#include "adaptexp/errors.hpp"
#include "adaptexp/harness.hpp"

namespace adaptexp {

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kRuntime = 3 };

void print_summary(std::ostream& out, const BenchmarkConfig& config) {
  out << "task " << to_string(config.task) << ", " << config.agents.size() << " agent(s), "
      << config.objectives.size() << " objective(s), " << config.replications << " replication(s), K="
      << config.environment.k << " (" << family_name(config.environment) << ")\n";
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Benchmark adaptive-experimentation policies on simulated and replayed trials", "adaptexp"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_override;
  std::size_t replications_override = 0;
  auto* run = app.add_subcommand("run", "Run a benchmark config and write the CSV report");
  run->add_option("config", config_path, "JSON config")->required();
  run->add_option("-o,--output", output_override, "Report path (overrides the config)");
  run->add_option("-r,--replications", replications_override, "Replications per agent (overrides the config)");

  auto* check = app.add_subcommand("validate", "Check a config without running it");
  check->add_option("config", config_path, "JSON config")->required();

  auto* agents = app.add_subcommand("list-agents", "Print agent kinds");
  auto* envs = app.add_subcommand("list-envs", "Print environment families");
  auto* objectives = app.add_subcommand("list-objectives", "Print objective names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "adaptexp: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    if (agents->parsed()) {
      for (auto kind : all_agent_kinds()) out << to_string(kind) << '\n';
    } else if (envs->parsed()) {
      for (const char* name : {"linear_gaussian", "moment_table", "bootstrap_site", "personalization"}) out << name << '\n';
    } else if (objectives->parsed()) {
      for (auto kind : all_objective_kinds()) out << to_string(kind) << '\n';
    } else if (check->parsed()) {
      const auto config = load_config(config_path);
      out << "ok: ";
      print_summary(out, config);
    } else if (run->parsed()) {
      auto config = load_config(config_path);
      if (!output_override.empty()) config.output = output_override;
      if (replications_override > 0) config.replications = replications_override;
      if (config.output.empty()) throw ConfigError("output", "no report path; set it in the config or pass --output");
      print_summary(out, config);
      const auto report = run_benchmark(config);
      out << "wrote " << report.rows.size() << " rows to " << config.output.string() << '\n';
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ParseError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}

}  // namespace adaptexp
