#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "adaptexp/errors.hpp"
#include "adaptexp/harness.hpp"
#include "adaptexp/ingestion.hpp"

namespace adaptexp {

namespace {

using nlohmann::json;

/// Field reader that tracks which keys were consumed so typos surface as errors.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(at(key), "is required");
    return j_.at(key);
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  std::string text(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string text(const std::string& key, const std::string& fallback) { return has(key) ? text(key) : fallback; }

  double real(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    return v.get<double>();
  }
  double real(const std::string& key, double fallback) { return has(key) ? real(key) : fallback; }

  std::uint64_t count(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number_unsigned()) throw ConfigError(at(key), "expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) { return has(key) ? count(key) : fallback; }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::vector<double> reals(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  Matrix matrix(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array() || v.empty()) throw ConfigError(at(key), "expected a non-empty array of rows");
    Matrix m;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string row_path = at(key) + "[" + std::to_string(i) + "]";
      if (!v[i].is_array()) throw ConfigError(row_path, "expected an array of numbers");
      if (i == 0) m.resize(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(v[0].size()));
      if (static_cast<Eigen::Index>(v[i].size()) != m.cols()) throw ConfigError(row_path, "ragged row");
      for (std::size_t j = 0; j < v[i].size(); ++j) {
        if (!v[i][j].is_number()) throw ConfigError(row_path, "expected a number");
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j].get<double>();
      }
    }
    return m;
  }

  Fields object(const std::string& key) { return Fields(raw(key), at(key)); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError(at(key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <class F>
auto wrap_source(const std::string& field, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(field, e.what());
  }
}

EpochSchedule parse_schedule(Fields f) {
  EpochSchedule s;
  s.t_total = f.count("epochs", 1);
  if (f.has("batch_sizes")) {
    s.batch_sizes.clear();
    for (double v : f.reals("batch_sizes")) {
      if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw ConfigError(f.at("batch_sizes"), "entries must be nonnegative integers");
      }
      s.batch_sizes.push_back(static_cast<std::size_t>(v));
    }
    if (!f.has("epochs")) s.t_total = s.batch_sizes.size();
  } else {
    s.batch_sizes.assign(s.t_total, f.count("batch_size", 1));
  }
  s.post_n = f.count("post_n", 100);
  f.finish();
  return s;
}

FeatureMap make_map(FeatureKind kind, std::size_t k, std::size_t context_dim, std::size_t epochs,
                    const std::string& field) {
  switch (kind) {
    case FeatureKind::ArmOneHot: return FeatureMap::arm_one_hot(k);
    case FeatureKind::PerArmInteraction: return FeatureMap::per_arm_interaction(k, context_dim);
    case FeatureKind::AdditiveConfounder: return FeatureMap::additive_confounder(k, context_dim);
    case FeatureKind::EpochArmOneHot: return FeatureMap::epoch_arm_one_hot(epochs, k);
    case FeatureKind::SiteSelect:
      if (k == 0 || context_dim % k != 0) throw ConfigError(field, "site_select needs stacked per-site contexts");
      return FeatureMap::site_select(k, context_dim / k);
  }
  throw ConfigError(field, "unhandled feature map");
}

FeatureKind default_agent_map(const EnvironmentSpec& spec) {
  if (const auto* lg = std::get_if<LinearGaussianParams>(&spec.family)) return lg->map.kind;
  if (std::holds_alternative<MomentTableParams>(spec.family)) return FeatureKind::EpochArmOneHot;
  if (std::holds_alternative<BootstrapSiteParams>(spec.family)) return FeatureKind::SiteSelect;
  return FeatureKind::PerArmInteraction;
}

MomentTable parse_moment_source(Fields& f, const std::filesystem::path& base, Rng& instance) {
  MomentTable table;
  int sources = 0;
  if (f.has("moments_csv")) {
    ++sources;
    const auto path = resolve(base, f.text("moments_csv"));
    const auto groups = wrap_source(f.at("moments_csv"), [&] { return parse_moment_csv(path); });
    if (groups.empty()) throw ConfigError(f.at("moments_csv"), "file holds no rows");
    const std::string experiment = f.text("experiment_id", groups.front().experiment_id);
    const std::string metric = f.text("metric_id", groups.front().metric_id);
    const auto it = std::find_if(groups.begin(), groups.end(), [&](const MomentGroup& g) {
      return g.experiment_id == experiment && g.metric_id == metric;
    });
    if (it == groups.end()) throw ConfigError(f.at("metric_id"), "no group " + experiment + "/" + metric);
    table = it->table;
  }
  if (f.has("sign_flip")) {
    ++sources;
    Fields s = f.object("sign_flip");
    SignFlipOptions o;
    o.arms = s.count("arms", o.arms);
    o.epochs = s.count("epochs", o.epochs);
    o.gap = s.real("gap", o.gap);
    o.epoch_shift = s.real("epoch_shift", o.epoch_shift);
    o.variance = s.real("variance", o.variance);
    s.finish();
    table = wrap_source(f.at("sign_flip"), [&] { return sign_flip_table(o); });
  }
  if (f.has("means")) {
    ++sources;
    table.means = f.matrix("means");
    table.vars = f.matrix("variances");
  }
  if (sources != 1) throw ConfigError(f.at("family"), "moment_table needs exactly one of moments_csv, sign_flip, means");
  if (f.has("augment")) {
    Fields a = f.object("augment");
    const std::size_t target = a.count("arms");
    const double scale = a.real("scale", 1.0);
    const std::size_t treatment = a.count("treatment_arm", 1);
    a.finish();
    table = wrap_source(f.at("augment"), [&] { return augment_arms(table, target, scale, instance, treatment); });
  }
  wrap_source(f.at("family"), [&] {
    validate(table);
    return 0;
  });
  return table;
}

SiteData parse_site_source(Fields& f, const std::filesystem::path& base, Rng& instance) {
  if (f.has("units_csv") == f.has("synthetic")) {
    throw ConfigError(f.at("family"), "bootstrap_site needs exactly one of units_csv, synthetic");
  }
  if (f.has("units_csv")) {
    const auto path = resolve(base, f.text("units_csv"));
    return wrap_source(f.at("units_csv"), [&] { return sites_from_units(parse_units_csv(path)); });
  }
  Fields s = f.object("synthetic");
  const std::size_t k = s.count("sites");
  const std::size_t p = s.count("features", 3);
  Vector theta;
  if (s.has("theta")) {
    const auto t = s.reals("theta");
    theta = Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
  } else {
    theta.resize(static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = instance.normal();
  }
  const std::size_t group = s.count("group_size", 20);
  const double household_sd = s.real("household_sd", 1.0);
  const double ate_noise_sd = s.real("ate_noise_sd", 0.0);
  s.finish();
  return wrap_source(f.at("synthetic"),
                     [&] { return synthetic_sites(k, p, theta, group, household_sd, ate_noise_sd, instance); });
}

EnvironmentSpec parse_environment(Fields f, EpochSchedule schedule, bool epochs_given,
                                  const std::filesystem::path& base, Rng& instance) {
  EnvironmentSpec spec;
  const std::string family = f.text("family");
  if (family == "linear_gaussian") {
    LinearGaussianParams p;
    spec.k = f.count("arms");
    const auto kind = wrap_source(f.at("feature_map"), [&] { return feature_kind_from_string(f.text("feature_map", "per_arm_interaction")); });
    p.map = make_map(kind, spec.k, f.count("context_dim", 0), schedule.t_total, f.at("feature_map"));
    if (f.has("theta")) {
      const auto t = f.reals("theta");
      p.theta = Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
    }
    p.theta_scale = f.real("theta_scale", 1.0);
    p.noise_s2 = f.real("noise_variance", 1.0);
    spec.family = std::move(p);
  } else if (family == "moment_table") {
    MomentTableParams p{parse_moment_source(f, base, instance)};
    spec.k = p.table.arms();
    if (!epochs_given) {
      const std::size_t batch = schedule.batch_sizes.front();
      schedule.t_total = p.table.epochs();
      schedule.batch_sizes.assign(schedule.t_total, batch);
    }
    spec.family = std::move(p);
  } else if (family == "bootstrap_site") {
    BootstrapSiteParams p{parse_site_source(f, base, instance)};
    spec.k = p.sites.size();
    spec.family = std::move(p);
  } else if (family == "personalization") {
    const double noise = f.real("noise_variance", 1.0);
    if (f.has("units_csv") == f.has("synthetic")) {
      throw ConfigError(f.at("family"), "personalization needs exactly one of units_csv, synthetic");
    }
    if (f.has("units_csv")) {
      const auto path = resolve(base, f.text("units_csv"));
      spec = wrap_source(f.at("units_csv"), [&] {
        const auto table = parse_units_csv(path);
        const auto labels = arm_labels(table.rows);
        const auto units = to_observed_units(table.rows, labels);
        return make_personalization_env(units, labels.size(), make_noise(noise), schedule);
      });
    } else {
      Fields s = f.object("synthetic");
      PersonalizationParams p;
      spec.k = f.count("arms");
      const std::size_t dim = s.count("features", 3);
      const double scale = s.real("theta_scale", 1.0);
      const std::size_t pool = s.count("pool_size", 500);
      s.finish();
      p.theta.resize(static_cast<Eigen::Index>(spec.k), static_cast<Eigen::Index>(dim));
      for (Eigen::Index a = 0; a < p.theta.rows(); ++a) {
        for (Eigen::Index j = 0; j < p.theta.cols(); ++j) p.theta(a, j) = scale * instance.normal();
      }
      p.pool = wrap_source(f.at("synthetic"), [&] { return synthetic_pool(pool, dim, instance); });
      p.noise_s2 = noise;
      spec.family = std::move(p);
    }
  } else {
    f.raw("family");
    throw ConfigError(f.at("family"), "unknown family '" + family +
                                          "' (expected linear_gaussian, moment_table, bootstrap_site, personalization)");
  }
  if (f.has("costs")) {
    Fields c = f.object("costs");
    CostModel costs;
    if (c.has("values")) costs.explicit_costs = c.reals("values");
    costs.mean = c.real("mean", costs.mean);
    costs.variance = c.real("variance", costs.variance);
    costs.floor = c.real("floor", costs.floor);
    c.finish();
    spec.costs = std::move(costs);
  }
  f.finish();
  spec.schedule = std::move(schedule);
  return spec;
}

AgentEntry parse_agent(Fields f, Task task, const EnvironmentSpec& env, std::size_t context_dim) {
  AgentEntry entry;
  if (task == Task::ExternalValidity) {
    const std::string method = f.text("method");
    entry.design = wrap_source(f.at("method"), [&] { return design_method_from_string(method); });
    entry.name = f.text("name", method);
    f.finish();
    return entry;
  }
  AgentConfig& c = entry.config;
  const std::string kind = f.text("kind");
  c.kind = wrap_source(f.at("kind"), [&] { return agent_kind_from_string(kind); });
  entry.name = f.text("name", kind);
  const FeatureKind map_kind =
      f.has("feature_map")
          ? wrap_source(f.at("feature_map"), [&] { return feature_kind_from_string(f.text("feature_map")); })
          : default_agent_map(env);
  c.feature_map = make_map(map_kind, env.k, context_dim, env.schedule.t_total, f.at("feature_map"));
  c.beta = f.real("beta", c.beta);
  c.alpha = f.real("alpha", c.alpha);
  c.ts_draws = f.count("ts_draws", c.ts_draws);
  c.prior_var = f.real("prior_variance", c.prior_var);
  c.noise_s2 = f.real("noise_variance", c.noise_s2);
  c.ridge = f.real("ridge", c.ridge);
  c.draw_per_batch = f.flag("draw_per_batch", c.draw_per_batch);
  if (f.has("costs")) c.costs = f.reals("costs");
  f.finish();
  return entry;
}

ObjectiveSpec parse_objective(const json& j, const std::string& path) {
  ObjectiveSpec spec;
  if (j.is_string()) {
    spec.kind = objective_kind_from_string(j.get<std::string>());
    return spec;
  }
  Fields f(j, path);
  spec.kind = objective_kind_from_string(f.text("kind"));
  spec.k = f.count("k", 1);
  f.finish();
  return spec;
}

ConstraintKind parse_constraint(const json& j, const std::string& path) {
  const auto from_name = [&](const std::string& name, Fields* f) {
    if (name == "single_sample") return ConstraintKind::single_sample();
    if (name == "budget") {
      if (!f) throw ConfigError(path, "budget constraint needs a total: {\"kind\": \"budget\", \"total\": ...}");
      return ConstraintKind::budget_total(f->real("total"));
    }
    throw ConfigError(path, "unknown constraint '" + name + "' (expected single_sample or budget)");
  };
  if (j.is_string()) return from_name(j.get<std::string>(), nullptr);
  Fields f(j, path);
  auto kind = from_name(f.text("kind"), &f);
  f.finish();
  return kind;
}

}  // namespace

BenchmarkConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<json>", e.what());
  }
  Fields root(doc, "");
  BenchmarkConfig config;
  config.task = task_from_string(root.text("task", "bandit"));
  config.seed = root.count("seed", 0);
  config.replications = root.count("replications", 1);
  if (root.has("output")) config.output = resolve(base_dir, root.text("output"));
  config.normalize_to_uniform = root.flag("normalize_to_uniform", false);
  const std::string normalization = root.text("normalization", "ratio_of_means");
  if (normalization == "ratio_of_means") config.normalization = Normalization::RatioOfMeans;
  else if (normalization == "per_replication") config.normalization = Normalization::PerReplication;
  else throw ConfigError("normalization", "expected ratio_of_means or per_replication");
  const std::string mode = root.text("exploit_mode", "terminal_average");
  if (mode == "terminal_average") config.exploit_mode = EpochMode::TerminalAverage;
  else if (mode == "per_epoch") config.exploit_mode = EpochMode::PerEpoch;
  else throw ConfigError("exploit_mode", "expected terminal_average or per_epoch");
  config.site_budget = root.count("site_budget", 0);

  EpochSchedule schedule;
  bool epochs_given = false;
  if (root.has("schedule")) {
    Fields s = root.object("schedule");
    epochs_given = s.has("epochs") || s.has("batch_sizes");
    schedule = parse_schedule(std::move(s));
  }

  Rng instance(derive_seed(config.seed, stream::kInstance));
  config.environment = parse_environment(root.object("environment"), schedule, epochs_given, base_dir, instance);
  const std::size_t context_dim = Environment(config.environment).context_dim();

  const auto& agents = root.raw("agents");
  if (!agents.is_array()) throw ConfigError("agents", "expected an array");
  for (std::size_t i = 0; i < agents.size(); ++i) {
    config.agents.push_back(
        parse_agent(Fields(agents[i], "agents[" + std::to_string(i) + "]"), config.task, config.environment, context_dim));
  }
  const auto& objectives = root.raw("objectives");
  if (!objectives.is_array()) throw ConfigError("objectives", "expected an array");
  for (std::size_t i = 0; i < objectives.size(); ++i) {
    config.objectives.push_back(parse_objective(objectives[i], "objectives[" + std::to_string(i) + "]"));
  }
  if (root.has("constraints")) {
    const auto& constraints = root.raw("constraints");
    if (!constraints.is_array()) throw ConfigError("constraints", "expected an array");
    for (std::size_t i = 0; i < constraints.size(); ++i) {
      config.constraints.push_back(parse_constraint(constraints[i], "constraints[" + std::to_string(i) + "]"));
    }
  }
  root.finish();
  validate(config);
  return config;
}

BenchmarkConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.parent_path());
}

}  // namespace adaptexp
