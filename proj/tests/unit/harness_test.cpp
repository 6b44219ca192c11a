#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "adaptexp/errors.hpp"
#include "adaptexp/harness.hpp"

namespace adaptexp {
namespace {

namespace fs = std::filesystem;

EnvironmentSpec linear_env(std::size_t k, std::size_t p, std::size_t epochs, std::size_t batch) {
  LinearGaussianParams f;
  f.map = FeatureMap::per_arm_interaction(k, p);
  EnvironmentSpec spec;
  spec.k = k;
  spec.schedule = EpochSchedule::uniform(epochs, batch, 50);
  spec.family = f;
  return spec;
}

AgentEntry agent(std::string name, AgentKind kind, FeatureMap map = {}) {
  AgentEntry e;
  e.name = std::move(name);
  e.config.kind = kind;
  e.config.feature_map = map;
  return e;
}

BenchmarkConfig small_benchmark() {
  BenchmarkConfig c;
  c.environment = linear_env(3, 2, 3, 10);
  const auto map = FeatureMap::per_arm_interaction(3, 2);
  c.agents = {agent("uniform", AgentKind::Uniform), agent("ts", AgentKind::LinearTS, map),
              agent("ucb", AgentKind::LinearUCB, map)};
  c.objectives = {{ObjectiveKind::SimpleRegret, 1}, {ObjectiveKind::CumulativeRegret, 1}};
  c.replications = 4;
  c.seed = 17;
  c.normalize_to_uniform = true;
  return c;
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("adaptexp_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                 ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "adaptexp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

TEST(RunReplication, UniformOnZeroGapHasNoSimpleRegret) {
  MomentTable table;
  table.means = Matrix::Constant(2, 2, 0.3);
  table.vars = Matrix::Constant(2, 2, 1.0);
  EnvironmentSpec env{EpochSchedule::uniform(2, 20, 10), 2, MomentTableParams{table}, std::nullopt, 0};
  AgentConfig uniform;
  const std::vector<ObjectiveSpec> obj{{ObjectiveKind::SimpleRegret, 1}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_EQ(run_replication(env, uniform, obj, {}, seed).scores[0], 0.0);
  }
}

TEST(RunReplication, SameSeedSameRecord) {
  const auto env = linear_env(3, 2, 3, 8);
  AgentConfig ts;
  ts.kind = AgentKind::LinearTTTS;
  ts.feature_map = FeatureMap::per_arm_interaction(3, 2);
  const std::vector<ObjectiveSpec> obj{{ObjectiveKind::PolicyRegret, 1}, {ObjectiveKind::CumulativeRegret, 1}};
  const auto a = run_replication(env, ts, obj, {}, ReplicationSeeds{5, 6});
  const auto b = run_replication(env, ts, obj, {}, ReplicationSeeds{5, 6});
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.ranking, b.ranking);
  EXPECT_EQ(a.record.final_assignments, b.record.final_assignments);
  ASSERT_EQ(a.record.history->size(), b.record.history->size());
  for (std::size_t t = 0; t < a.record.history->size(); ++t) {
    EXPECT_EQ((*a.record.history)[t].assignments, (*b.record.history)[t].assignments);
    EXPECT_EQ((*a.record.history)[t].outcomes, (*b.record.history)[t].outcomes);
  }
}

TEST(RunReplication, UcbHandTrace) {
  // T=1, n=1, noiseless, theta* = (0.3, 0.7) over one-hot arms.
  LinearGaussianParams f;
  f.map = FeatureMap::arm_one_hot(2);
  f.theta = (Vector(2) << 0.3, 0.7).finished();
  f.noise_s2 = 0.0;
  EnvironmentSpec env{EpochSchedule::uniform(1, 1, 4), 2, f, std::nullopt, 0};
  AgentConfig ucb;
  ucb.kind = AgentKind::LinearUCB;
  ucb.feature_map = f.map;
  const std::vector<ObjectiveSpec> obj{{ObjectiveKind::SimpleRegret, 1}, {ObjectiveKind::CumulativeRegret, 1}};
  const auto r = run_replication(env, ucb, obj, {}, 0);
  // V = I, theta_hat = 0: both indices equal alpha, the tie goes to arm 0, which pays 0.3.
  // Then V = diag(2, 1), b = (0.3, 0), theta_hat = (0.15, 0): exploit keeps arm 0.
  ASSERT_EQ(r.record.history->size(), 1u);
  EXPECT_EQ((*r.record.history)[0].assignments, std::vector<std::size_t>{0});
  EXPECT_EQ((*r.record.history)[0].outcomes, std::vector<double>{0.3});
  EXPECT_EQ(r.record.final_assignments, std::vector<std::size_t>(4, 0));
  EXPECT_EQ(r.ranking, (std::vector<std::size_t>{0, 1}));
  EXPECT_NEAR(r.scores[0], 0.4, 1e-15);
  EXPECT_NEAR(r.scores[1], 0.4, 1e-15);
}

TEST(RunReplication, DimensionMismatchBeforeStepping) {
  const auto env = linear_env(3, 2, 3, 8);
  AgentConfig ts;
  ts.kind = AgentKind::LinearTS;
  ts.feature_map = FeatureMap::per_arm_interaction(3, 4);
  EXPECT_THROW(run_replication(env, ts, std::vector<ObjectiveSpec>{{}}, {}, 0), ConfigError);
  ts.feature_map = FeatureMap::per_arm_interaction(4, 2);
  EXPECT_THROW(run_replication(env, ts, std::vector<ObjectiveSpec>{{}}, {}, 0), ConfigError);
}

TEST(RunReplication, ConstraintsHoldOnEveryRun) {
  Rng gen(3);
  Vector theta(3);
  theta << 1.0, 0.5, -0.5;
  EnvironmentSpec env;
  env.k = 12;
  env.family = BootstrapSiteParams{synthetic_sites(12, 3, theta, 10, 1.0, 0.1, gen)};
  env.schedule = EpochSchedule::uniform(15, 1, 1);
  env.costs = CostModel{{}, 20.0, 10.0, 1.0};
  const std::vector<ObjectiveSpec> obj{{ObjectiveKind::SimpleRegret, 1}};
  const std::vector<ConstraintKind> single{ConstraintKind::single_sample()};
  const std::vector<ConstraintKind> budget{ConstraintKind::budget_total(80.0)};
  for (auto kind : {AgentKind::Uniform, AgentKind::LinearTS, AgentKind::LinearUCB, AgentKind::BudgetTS,
                    AgentKind::MabTS, AgentKind::MabTTTS}) {
    AgentConfig cfg;
    cfg.kind = kind;
    cfg.feature_map = FeatureMap::site_select(12, 3);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto s = run_replication(env, cfg, obj, single, ReplicationSeeds{seed, seed + 100});
      std::vector<int> counts(12, 0);
      for (const auto& rec : *s.record.history)
        for (auto a : rec.assignments) ++counts[a];
      EXPECT_LE(*std::max_element(counts.begin(), counts.end()), 1) << to_string(kind);
      EXPECT_TRUE(s.record.violations.empty());

      const auto b = run_replication(env, cfg, obj, budget, ReplicationSeeds{seed, seed + 100});
      const auto costs = Environment([&] {
        auto e = env;
        e.seed = seed;
        return e;
      }()).costs();
      double spend = 0.0;
      for (const auto& rec : *b.record.history)
        for (auto a : rec.assignments) spend += costs[a];
      EXPECT_LE(spend, 80.0) << to_string(kind);
      EXPECT_TRUE(b.record.violations.empty());
    }
  }
}

TEST(Summarize, SingleReplicationAndMean) {
  const auto one = summarize("a", "o", {2.5});
  EXPECT_EQ(one.mean, 2.5);
  EXPECT_EQ(one.se, 0.0);
  EXPECT_EQ(one.ci_lo, 2.5);
  EXPECT_EQ(one.ci_hi, 2.5);

  const std::vector<double> v{1.0, 2.0, 4.0, 7.0};
  const auto row = summarize("a", "o", v);
  const double mean = 3.5;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double se = std::sqrt(ss / 3.0) / 2.0;
  EXPECT_NEAR(row.mean, mean, 1e-12);
  EXPECT_NEAR(row.se, se, 1e-12);
  EXPECT_NEAR(row.ci_lo, mean - 1.96 * se, 1e-12);
  EXPECT_NEAR(row.ci_hi, mean + 1.96 * se, 1e-12);
  EXPECT_LE(row.ci_lo, row.mean);
  EXPECT_GE(row.ci_hi, row.mean);
}

TEST(RunBenchmark, MeanIsArithmeticMeanOfReplications) {
  const auto report = run_benchmark(small_benchmark());
  for (const auto& row : report.rows) {
    const double mean = std::accumulate(row.values.begin(), row.values.end(), 0.0) / row.values.size();
    EXPECT_NEAR(row.mean, mean, 1e-12);
    EXPECT_GE(row.se, 0.0);
  }
}

TEST(RunBenchmark, SingleReplicationHasZeroSe) {
  auto c = small_benchmark();
  c.replications = 1;
  for (const auto& row : run_benchmark(c).rows) {
    EXPECT_EQ(row.se, 0.0);
    EXPECT_EQ(row.ci_lo, row.mean);
    EXPECT_EQ(row.ci_hi, row.mean);
  }
}

TEST(RunBenchmark, AgentOrderDoesNotMatter) {
  auto c = small_benchmark();
  const auto a = run_benchmark(c);
  std::reverse(c.agents.begin(), c.agents.end());
  const auto b = run_benchmark(c);
  for (const auto& row : a.rows) {
    const auto& other = b.at(row.agent, row.objective);
    EXPECT_EQ(row.values, other.values) << row.agent;
    EXPECT_EQ(row.mean, other.mean);
  }
}

TEST(RunBenchmark, ReplicationIndependence) {
  auto c = small_benchmark();
  c.replications = 2;
  const auto few = run_benchmark(c);
  c.replications = 5;
  const auto many = run_benchmark(c);
  for (const auto& row : few.rows) {
    const auto& longer = many.at(row.agent, row.objective).values;
    EXPECT_TRUE(std::equal(row.values.begin(), row.values.end(), longer.begin()));
  }
}

TEST(RunBenchmark, UniformRatioIsOne) {
  auto c = small_benchmark();
  c.agents.erase(c.agents.begin());  // uniform is added back automatically
  const auto report = run_benchmark(c);
  const auto& row = report.at("uniform", "simple_regret");
  ASSERT_NE(row.mean, 0.0);
  EXPECT_EQ(row.ratio_to_uniform, 1.0);
  EXPECT_EQ(report.at("uniform", "cumulative_regret").ratio_to_uniform, 1.0);

  c.normalization = Normalization::PerReplication;
  const auto per = run_benchmark(c);
  if (std::none_of(row.values.begin(), row.values.end(), [](double v) { return v == 0.0; })) {
    EXPECT_EQ(per.at("uniform", "simple_regret").ratio_to_uniform, 1.0);
  }
}

TEST(RunBenchmark, RatioOfMeans) {
  const auto report = run_benchmark(small_benchmark());
  const double base = report.at("uniform", "cumulative_regret").mean;
  EXPECT_DOUBLE_EQ(report.at("ts", "cumulative_regret").ratio_to_uniform, report.at("ts", "cumulative_regret").mean / base);
}

TEST(RunBenchmark, UnwritableOutputFailsFirst) {
  auto c = small_benchmark();
  c.output = "/nonexistent-dir/for/sure/report.csv";
  EXPECT_THROW(run_benchmark(c), IoError);
}

TEST(RunBenchmark, ValidationErrors) {
  auto c = small_benchmark();
  c.replications = 0;
  EXPECT_THROW(run_benchmark(c), ConfigError);
  c = small_benchmark();
  c.objectives.clear();
  EXPECT_THROW(validate(c), ConfigError);
  c = small_benchmark();
  c.agents.push_back(c.agents[1]);
  EXPECT_THROW(validate(c), ConfigError);
  c = small_benchmark();
  c.objectives.push_back({ObjectiveKind::TopKRegret, 4});
  EXPECT_THROW(validate(c), ConfigError);
  c = small_benchmark();
  c.objectives.push_back({ObjectiveKind::SignGeneralization, 1});
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(WriteReport, HeaderAndRows) {
  AggregateReport report;
  report.rows.push_back(summarize("ts", "simple_regret", {0.25, 0.75}));
  report.rows.back().ratio_to_uniform = std::nan("");
  std::ostringstream out;
  write_report(out, report);
  std::istringstream in(out.str());
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, kReportHeader);
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 23), "ts,simple_regret,0.5,0.");
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
}

TEST(ParseConfig, ShippedConfigsValidate) {
  for (const auto& entry : fs::directory_iterator(ADAPTEXP_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(validate(load_config(entry.path()))) << entry.path();
  }
}

TEST(ParseConfig, UnknownKeyNamesPath) {
  const std::string text = R"({"task": "bandit", "replications": 2, "schedule": {"epochs": 2, "batch_size": 3},
    "environment": {"family": "linear_gaussian", "arms": 2, "feature_map": "arm_one_hot", "nosie_variance": 1},
    "agents": [{"name": "u", "kind": "uniform"}], "objectives": ["simple_regret"]})";
  try {
    parse_config(text);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("environment.nosie_variance"), std::string::npos) << e.what();
  }
}

TEST(ParseConfig, MinimalConfigFields) {
  const std::string text = R"({"task": "bandit", "seed": 9, "replications": 3, "output": "out.csv",
    "schedule": {"epochs": 2, "batch_size": 3, "post_n": 7},
    "environment": {"family": "linear_gaussian", "arms": 2, "feature_map": "arm_one_hot"},
    "agents": [{"name": "u", "kind": "uniform"}, {"name": "t", "kind": "mab_ttts", "beta": 0.3}],
    "objectives": ["simple_regret", {"kind": "top_k_regret", "k": 1}],
    "constraints": ["single_sample"]})";
  const auto c = parse_config(text, "/tmp/base");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.replications, 3u);
  EXPECT_EQ(c.output, fs::path("/tmp/base/out.csv"));
  EXPECT_EQ(c.environment.k, 2u);
  EXPECT_EQ(c.environment.schedule.post_n, 7u);
  ASSERT_EQ(c.agents.size(), 2u);
  EXPECT_EQ(c.agents[1].config.kind, AgentKind::MabTTTS);
  EXPECT_EQ(c.agents[1].config.beta, 0.3);
  EXPECT_EQ(c.objectives[1].kind, ObjectiveKind::TopKRegret);
  ASSERT_EQ(c.constraints.size(), 1u);
  EXPECT_EQ(c.constraints[0].tag, ConstraintKindTag::SingleSample);
}

TEST(ReplicationSeeds, EnvironmentSharedAcrossAgents) {
  const auto a = replication_seeds(1, "ts", 3);
  const auto b = replication_seeds(1, "ucb", 3);
  EXPECT_EQ(a.environment, b.environment);
  EXPECT_NE(a.agent, b.agent);
  EXPECT_NE(replication_seeds(1, "ts", 4).environment, a.environment);
}

TEST(Cli, ListAgentsHasExactlyEightNames) {
  std::string out;
  ASSERT_EQ(cli({"list-agents"}, &out), 0);
  std::istringstream in(out);
  std::vector<std::string> names;
  for (std::string line; std::getline(in, line);) names.push_back(line);
  EXPECT_EQ(names, (std::vector<std::string>{"uniform", "linear_ts", "linear_ttts", "linear_ucb", "linear_ei",
                                             "budget_ts", "mab_ts", "mab_ttts"}));
}

TEST(Cli, ListEnvsAndObjectives) {
  std::string out;
  ASSERT_EQ(cli({"list-envs"}, &out), 0);
  EXPECT_EQ(out, "linear_gaussian\nmoment_table\nbootstrap_site\npersonalization\n");
  ASSERT_EQ(cli({"list-objectives"}, &out), 0);
  EXPECT_NE(out.find("sign_generalization"), std::string::npos);
  EXPECT_NE(out.find("top_k_regret"), std::string::npos);
}

TEST(Cli, ValidateMalformedJsonExitsTwo) {
  TempDir dir;
  const auto path = dir.path / "bad.json";
  std::ofstream(path) << "{\"task\": \"bandit\", ";
  std::string err;
  EXPECT_EQ(cli({"validate", path.string()}, nullptr, &err), 2);
  EXPECT_FALSE(err.empty());
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}), 1);
  EXPECT_EQ(cli({"frobnicate"}), 1);
  EXPECT_EQ(cli({"run"}), 1);
}

TEST(Cli, MissingConfigExitsTwo) { EXPECT_EQ(cli({"validate", "/no/such/config.json"}), 2); }

TEST(Cli, RunWritesReportWithHeader) {
  TempDir dir;
  const auto report = dir.path / "report.csv";
  std::string out;
  ASSERT_EQ(cli({"run", std::string(ADAPTEXP_CONFIG_DIR) + "/linear_gaussian.json", "-o", report.string(), "-r", "2"}, &out),
            0)
      << out;
  const auto text = slurp(report);
  EXPECT_EQ(text.substr(0, text.find('\n')), kReportHeader);
  EXPECT_NE(out.find("wrote"), std::string::npos);
}

TEST(Cli, RunIsByteDeterministic) {
  TempDir dir;
  const auto a = dir.path / "a.csv";
  const auto b = dir.path / "b.csv";
  const std::string config = std::string(ADAPTEXP_CONFIG_DIR) + "/nonstationary.json";
  ASSERT_EQ(cli({"run", config, "-o", a.string(), "-r", "3"}), 0);
  ASSERT_EQ(cli({"run", config, "-o", b.string(), "-r", "3"}), 0);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Cli, RuntimeErrorExitsThree) {
  EXPECT_EQ(cli({"run", std::string(ADAPTEXP_CONFIG_DIR) + "/linear_gaussian.json", "-o", "/nonexistent-dir/x/y.csv"}),
            3);
}

}  // namespace
}  // namespace adaptexp
