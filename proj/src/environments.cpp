#include "adaptexp/environments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "adaptexp/errors.hpp"

namespace adaptexp {

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string idx(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

}  // namespace

// ---------------------------------------------------------------------------
// Reward processes. Each family owns its instance parameters (already drawn) and answers
// context sampling, outcome sampling and oracle means.

class RewardProcess {
 public:
  virtual ~RewardProcess() = default;
  virtual std::size_t context_dim() const = 0;
  virtual Vector sample_context(std::size_t epoch, Rng& rng) const = 0;
  virtual Vector sample_post_context(Rng& rng) const { return sample_context(0, rng); }
  virtual double mean(std::size_t epoch, const Vector& x, std::size_t arm) const = 0;
  virtual double post_mean(const Vector& x, std::size_t arm) const { return mean(0, x, arm); }
  virtual double sample(std::size_t epoch, const Vector& x, std::size_t arm, Rng& noise, Rng& boot) const = 0;
};

namespace {

class LinearGaussianProcess final : public RewardProcess {
 public:
  LinearGaussianProcess(FeatureMap map, Vector theta, double s2, std::size_t epochs)
      : map_(std::move(map)), theta_(std::move(theta)), sd_(std::sqrt(s2)), epochs_(epochs) {}

  std::size_t context_dim() const override { return map_.input_dim(); }

  Vector sample_context(std::size_t, Rng& rng) const override {
    Vector x(static_cast<Eigen::Index>(context_dim()));
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
    return x;
  }

  double mean(std::size_t epoch, const Vector& x, std::size_t arm) const override {
    return linear_score(map_, x, arm, epoch, theta_);
  }

  double post_mean(const Vector& x, std::size_t arm) const override {
    if (!map_.temporal()) return mean(0, x, arm);
    double total = 0.0;
    for (std::size_t t = 0; t < epochs_; ++t) total += mean(t, x, arm);
    return total / static_cast<double>(epochs_);
  }

  double sample(std::size_t epoch, const Vector& x, std::size_t arm, Rng& noise, Rng&) const override {
    const double z = noise.normal();
    return mean(epoch, x, arm) + sd_ * z;
  }

 private:
  FeatureMap map_;
  Vector theta_;
  double sd_;
  std::size_t epochs_;
};

class MomentTableProcess final : public RewardProcess {
 public:
  explicit MomentTableProcess(MomentTable table)
      : table_(std::move(table)), sd_(table_.vars.cwiseSqrt()), averaged_(table_.averaged_means()) {}

  std::size_t context_dim() const override { return 0; }
  Vector sample_context(std::size_t, Rng&) const override { return Vector(); }

  double mean(std::size_t epoch, const Vector&, std::size_t arm) const override {
    return table_.means(static_cast<Eigen::Index>(epoch), static_cast<Eigen::Index>(arm));
  }
  double post_mean(const Vector&, std::size_t arm) const override { return averaged_(static_cast<Eigen::Index>(arm)); }

  double sample(std::size_t epoch, const Vector& x, std::size_t arm, Rng& noise, Rng&) const override {
    const double z = noise.normal();
    return mean(epoch, x, arm) + sd_(static_cast<Eigen::Index>(epoch), static_cast<Eigen::Index>(arm)) * z;
  }

 private:
  MomentTable table_;
  Matrix sd_;
  Vector averaged_;
};

class BootstrapSiteProcess final : public RewardProcess {
 public:
  explicit BootstrapSiteProcess(SiteData sites) : sites_(std::move(sites)) {
    const auto p = sites_.front().features.size();
    stacked_.resize(p * static_cast<Eigen::Index>(sites_.size()));
    for (std::size_t a = 0; a < sites_.size(); ++a) {
      stacked_.segment(static_cast<Eigen::Index>(a) * p, p) = sites_[a].features;
      ates_.push_back(sites_[a].true_ate());
    }
  }

  std::size_t context_dim() const override { return static_cast<std::size_t>(stacked_.size()); }
  Vector sample_context(std::size_t, Rng&) const override { return stacked_; }
  double mean(std::size_t, const Vector&, std::size_t arm) const override { return ates_[arm]; }
  double sample(std::size_t, const Vector&, std::size_t arm, Rng&, Rng& boot) const override {
    return bootstrap_ate(sites_[arm], boot);
  }

 private:
  SiteData sites_;
  Vector stacked_;
  std::vector<double> ates_;
};

class PersonalizationProcess final : public RewardProcess {
 public:
  explicit PersonalizationProcess(PersonalizationParams params)
      : params_(std::move(params)), sd_(std::sqrt(params_.noise_s2)) {}

  std::size_t context_dim() const override { return static_cast<std::size_t>(params_.theta.cols()); }
  Vector sample_context(std::size_t, Rng& rng) const override { return params_.pool[rng.index(params_.pool.size())]; }
  double mean(std::size_t, const Vector& x, std::size_t arm) const override {
    return params_.theta.row(static_cast<Eigen::Index>(arm)).dot(x);
  }
  double sample(std::size_t epoch, const Vector& x, std::size_t arm, Rng& noise, Rng&) const override {
    const double z = noise.normal();
    return mean(epoch, x, arm) + sd_ * z;
  }

 private:
  PersonalizationParams params_;
  double sd_;
};

}  // namespace

// ---------------------------------------------------------------------------

EpochSchedule EpochSchedule::uniform(std::size_t epochs, std::size_t batch, std::size_t post_n) {
  return EpochSchedule{epochs, std::vector<std::size_t>(epochs, batch), post_n};
}

std::size_t EpochSchedule::total_units() const {
  return std::accumulate(batch_sizes.begin(), batch_sizes.end(), std::size_t{0});
}

Vector MomentTable::averaged_means() const { return means.colwise().mean().transpose(); }

void validate(const MomentTable& table) {
  if (table.means.rows() != table.vars.rows() || table.means.cols() != table.vars.cols()) {
    throw ConfigError("table", "means and variances must share a T x K shape");
  }
  if (table.means.size() == 0) throw ConfigError("table", "moment table is empty");
  if (!table.means.allFinite()) throw ConfigError("table.means", "non-finite mean");
  for (Eigen::Index t = 0; t < table.vars.rows(); ++t) {
    for (Eigen::Index a = 0; a < table.vars.cols(); ++a) {
      if (!(table.vars(t, a) > 0.0) || !std::isfinite(table.vars(t, a))) {
        throw ConfigError("table.vars[" + std::to_string(t) + "][" + std::to_string(a) + "]",
                          "variance must be positive");
      }
    }
  }
}

double Site::true_ate() const { return mean_of(treated) - mean_of(control); }

void validate(const SiteData& sites) {
  if (sites.empty()) throw ConfigError("sites", "no sites");
  const auto p = sites.front().features.size();
  for (std::size_t a = 0; a < sites.size(); ++a) {
    if (sites[a].features.size() != p) throw ConfigError(idx("sites", a) + ".features", "feature length differs");
    if (sites[a].treated.size() < 2) throw ConfigError(idx("sites", a) + ".treated", "needs at least 2 outcomes");
    if (sites[a].control.size() < 2) throw ConfigError(idx("sites", a) + ".control", "needs at least 2 outcomes");
  }
}

double bootstrap_ate(const Site& site, Rng& rng) {
  auto resampled_mean = [&rng](const std::vector<double>& v) {
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) total += v[rng.index(v.size())];
    return total / static_cast<double>(v.size());
  };
  const double treated = resampled_mean(site.treated);
  const double control = resampled_mean(site.control);
  return treated - control;
}

std::string family_name(const EnvironmentSpec& spec) {
  return std::visit(
      [](const auto& f) -> std::string {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, LinearGaussianParams>) return "linear_gaussian";
        if constexpr (std::is_same_v<F, MomentTableParams>) return "moment_table";
        if constexpr (std::is_same_v<F, BootstrapSiteParams>) return "bootstrap_site";
        if constexpr (std::is_same_v<F, PersonalizationParams>) return "personalization";
      },
      spec.family);
}

void validate(const EnvironmentSpec& spec) {
  const auto& s = spec.schedule;
  if (s.t_total < 1) throw ConfigError("schedule.t_total", "must be at least 1");
  if (s.batch_sizes.size() != s.t_total) {
    throw ConfigError("schedule.batch_sizes", "expected " + std::to_string(s.t_total) + " entries, got " +
                                                  std::to_string(s.batch_sizes.size()));
  }
  for (std::size_t t = 0; t < s.batch_sizes.size(); ++t) {
    if (s.batch_sizes[t] < 1) throw ConfigError(idx("schedule.batch_sizes", t), "batch size must be at least 1");
  }
  if (s.post_n < 1) throw ConfigError("schedule.post_n", "must be at least 1");
  if (spec.k < 1) throw ConfigError("k", "need at least one arm");

  std::visit(
      [&](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, LinearGaussianParams>) {
          if (f.map.arms != spec.k) throw ConfigError("family.feature_map.arms", "does not match k");
          if (f.map.temporal() && f.map.epochs != s.t_total) {
            throw ConfigError("family.feature_map.epochs", "does not match schedule.t_total");
          }
          if (f.theta.size() != 0 && static_cast<std::size_t>(f.theta.size()) != f.map.dim()) {
            throw ConfigError("family.theta", "expected length " + std::to_string(f.map.dim()));
          }
          if (!(f.noise_s2 >= 0.0)) throw ConfigError("family.noise_s2", "must be nonnegative");
          if (!(f.theta_scale >= 0.0)) throw ConfigError("family.theta_scale", "must be nonnegative");
        } else if constexpr (std::is_same_v<F, MomentTableParams>) {
          validate(f.table);
          if (f.table.arms() != spec.k) throw ConfigError("family.table", "has " + std::to_string(f.table.arms()) + " arms, k is " + std::to_string(spec.k));
          if (f.table.epochs() != s.t_total) {
            throw ConfigError("family.table", "has " + std::to_string(f.table.epochs()) + " epochs, schedule has " +
                                                  std::to_string(s.t_total));
          }
        } else if constexpr (std::is_same_v<F, BootstrapSiteParams>) {
          validate(f.sites);
          if (f.sites.size() != spec.k) throw ConfigError("family.sites", "site count does not match k");
        } else if constexpr (std::is_same_v<F, PersonalizationParams>) {
          if (static_cast<std::size_t>(f.theta.rows()) != spec.k) throw ConfigError("family.theta", "row count does not match k");
          if (f.pool.empty()) throw ConfigError("family.pool", "covariate pool is empty");
          for (std::size_t i = 0; i < f.pool.size(); ++i) {
            if (f.pool[i].size() != f.theta.cols()) throw ConfigError(idx("family.pool", i), "covariate length mismatch");
          }
          if (!(f.noise_s2 >= 0.0)) throw ConfigError("family.noise_s2", "must be nonnegative");
        }
      },
      spec.family);

  if (spec.costs) {
    const auto& c = *spec.costs;
    if (!c.explicit_costs.empty()) {
      if (c.explicit_costs.size() != spec.k) throw ConfigError("costs", "expected one cost per arm");
      for (std::size_t a = 0; a < c.explicit_costs.size(); ++a) {
        if (!(c.explicit_costs[a] > 0.0)) throw ConfigError(idx("costs", a), "cost must be positive");
      }
    } else {
      if (!(c.variance >= 0.0)) throw ConfigError("costs.variance", "must be nonnegative");
      if (!(c.floor > 0.0)) throw ConfigError("costs.floor", "must be positive");
    }
  }
}

// ---------------------------------------------------------------------------

Environment::Environment(EnvironmentSpec spec) : spec_(std::move(spec)) {
  if (std::holds_alternative<BootstrapSiteParams>(spec_.family)) {
    std::fill(spec_.schedule.batch_sizes.begin(), spec_.schedule.batch_sizes.end(), std::size_t{1});
  }
  validate(spec_);

  Rng instance(derive_seed(spec_.seed, stream::kInstance));
  std::visit(
      [&](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, LinearGaussianParams>) {
          Vector theta = f.theta;
          if (theta.size() == 0) {
            theta.resize(static_cast<Eigen::Index>(f.map.dim()));
            for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = f.theta_scale * instance.normal();
          }
          process_ = std::make_shared<LinearGaussianProcess>(f.map, theta, f.noise_s2, spec_.schedule.t_total);
        } else if constexpr (std::is_same_v<F, MomentTableParams>) {
          process_ = std::make_shared<MomentTableProcess>(f.table);
        } else if constexpr (std::is_same_v<F, BootstrapSiteParams>) {
          process_ = std::make_shared<BootstrapSiteProcess>(f.sites);
        } else if constexpr (std::is_same_v<F, PersonalizationParams>) {
          process_ = std::make_shared<PersonalizationProcess>(f);
        }
      },
      spec_.family);

  if (spec_.costs) {
    const auto& c = *spec_.costs;
    if (!c.explicit_costs.empty()) {
      costs_ = c.explicit_costs;
    } else {
      const double sd = std::sqrt(c.variance);
      for (std::size_t a = 0; a < spec_.k; ++a) costs_.push_back(std::max(c.floor, c.mean + sd * instance.normal()));
    }
  }
  reset();
}

Environment::~Environment() = default;
Environment::Environment(Environment&&) noexcept = default;
Environment& Environment::operator=(Environment&&) noexcept = default;

std::size_t Environment::context_dim() const { return process_->context_dim(); }

const EpochBatch& Environment::reset() {
  context_rng_ = Rng(derive_seed(spec_.seed, stream::kContext));
  noise_rng_ = Rng(derive_seed(spec_.seed, stream::kNoise));
  bootstrap_rng_ = Rng(derive_seed(spec_.seed, stream::kBootstrap));
  post_seed_ = derive_seed(spec_.seed, stream::kPost);
  epoch_ = 0;
  terminal_ = false;
  history_.clear();
  draw_batch();
  return batch_;
}

void Environment::draw_batch() {
  batch_.epoch = epoch_;
  batch_.contexts.clear();
  const std::size_t n = spec_.schedule.batch_sizes[epoch_];
  batch_.contexts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) batch_.contexts.push_back(process_->sample_context(epoch_, context_rng_));
}

const EpochBatch& Environment::current_batch() const {
  if (terminal_) throw StateError("environment is terminal; no current batch");
  return batch_;
}

StepResult Environment::step(std::span<const std::size_t> assignments) { return advance(assignments, false); }

StepResult Environment::step_truncated(std::span<const std::size_t> assignments) { return advance(assignments, true); }

void Environment::terminate() {
  if (terminal_) throw StateError("environment already terminal");
  terminal_ = true;
}

StepResult Environment::advance(std::span<const std::size_t> assignments, bool truncate) {
  if (terminal_) throw StateError("step called on a terminal environment");
  const std::size_t n = batch_.contexts.size();
  if (truncate ? assignments.size() > n : assignments.size() != n) {
    throw InvalidInput("step: expected " + std::to_string(n) + " assignments, got " + std::to_string(assignments.size()));
  }
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] >= spec_.k) {
      throw InvalidInput("step: assignment " + std::to_string(i) + " is arm " + std::to_string(assignments[i]) +
                         ", K=" + std::to_string(spec_.k));
    }
  }
  EpochRecord record;
  record.epoch = epoch_;
  record.contexts.assign(batch_.contexts.begin(), batch_.contexts.begin() + static_cast<std::ptrdiff_t>(assignments.size()));
  record.assignments.assign(assignments.begin(), assignments.end());
  record.outcomes.reserve(assignments.size());
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    record.outcomes.push_back(process_->sample(epoch_, record.contexts[i], assignments[i], noise_rng_, bootstrap_rng_));
  }
  StepResult result;
  result.outcomes = record.outcomes;
  history_.push_back(std::move(record));

  ++epoch_;
  if (truncate || epoch_ >= spec_.schedule.t_total) {
    terminal_ = true;
    return result;
  }
  draw_batch();
  result.next = batch_;
  return result;
}

MeanOracle Environment::oracle() const {
  auto process = process_;
  MeanOracle oracle;
  oracle.arms = spec_.k;
  oracle.epoch_mean = [process](std::size_t t, const Vector& x, std::size_t a) { return process->mean(t, x, a); };
  oracle.post_mean = [process](const Vector& x, std::size_t a) { return process->post_mean(x, a); };
  return oracle;
}

PostExperiment Environment::post_experiment_eval() {
  if (!terminal_) throw StateError("post-experiment evaluation requested before the experiment ended");
  PostExperiment post;
  Rng rng(post_seed_);
  post.contexts.reserve(spec_.schedule.post_n);
  for (std::size_t i = 0; i < spec_.schedule.post_n; ++i) post.contexts.push_back(process_->sample_post_context(rng));
  post.oracle = oracle();
  return post;
}

// ---------------------------------------------------------------------------

MomentTable augment_arms(const MomentTable& table, std::size_t target_k, double scale, Rng& rng,
                         std::size_t treatment_arm) {
  validate(table);
  const std::size_t k = table.arms();
  if (target_k < k) {
    throw InvalidInput("augment_arms: target_k " + std::to_string(target_k) + " is below existing K=" + std::to_string(k));
  }
  if (k == 1) treatment_arm = 0;
  if (treatment_arm >= k) throw InvalidInput("augment_arms: treatment arm out of range");
  if (target_k == k) return table;

  const auto tr = static_cast<Eigen::Index>(treatment_arm);
  const Vector column = table.means.col(tr);
  const auto t_count = column.size();
  double s_hat = 0.0;
  if (t_count > 1) {
    const double m = column.mean();
    s_hat = std::sqrt((column.array() - m).square().sum() / static_cast<double>(t_count - 1));
  }
  const double sd = scale * s_hat;

  MomentTable out;
  const auto new_k = static_cast<Eigen::Index>(target_k);
  out.means.resize(t_count, new_k);
  out.vars.resize(t_count, new_k);
  out.means.leftCols(static_cast<Eigen::Index>(k)) = table.means;
  out.vars.leftCols(static_cast<Eigen::Index>(k)) = table.vars;
  for (auto a = static_cast<Eigen::Index>(k); a < new_k; ++a) {
    for (Eigen::Index t = 0; t < t_count; ++t) {
      const double z = rng.normal();
      out.means(t, a) = table.means(t, tr) + sd * z;
    }
    out.vars.col(a) = table.vars.col(tr);
  }
  return out;
}

Matrix fit_per_arm_coefficients(std::span<const ObservedUnit> units, std::size_t k) {
  if (units.empty()) throw ConfigError("units", "no observed units");
  const auto p = static_cast<std::size_t>(units.front().covariates.size());
  std::vector<DesignState> designs(k, design_reset(p, 1e-6));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    if (u.arm >= k) throw ConfigError(idx("units", i) + ".arm", "arm " + std::to_string(u.arm) + " out of range");
    if (static_cast<std::size_t>(u.covariates.size()) != p) throw ConfigError(idx("units", i) + ".covariates", "length mismatch");
    designs[u.arm].v.noalias() += u.covariates * u.covariates.transpose();
    designs[u.arm].b += u.outcome * u.covariates;
    ++counts[u.arm];
  }
  Matrix theta(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
  for (std::size_t a = 0; a < k; ++a) {
    if (counts[a] < p) {
      throw ConfigError("units", "arm " + std::to_string(a) + " has " + std::to_string(counts[a]) +
                                     " observations, needs at least " + std::to_string(p));
    }
    theta.row(static_cast<Eigen::Index>(a)) = ols_estimate(designs[a]).transpose();
  }
  return theta;
}

EnvironmentSpec make_personalization_env(std::span<const ObservedUnit> units, std::size_t k, NoiseModel noise,
                                         EpochSchedule schedule, std::uint64_t seed) {
  if (k < 1) throw ConfigError("k", "need at least one arm");
  PersonalizationParams params;
  params.theta = fit_per_arm_coefficients(units, k);
  params.noise_s2 = noise.s2;
  params.pool.reserve(units.size());
  for (const auto& u : units) params.pool.push_back(u.covariates);
  EnvironmentSpec spec{std::move(schedule), k, std::move(params), std::nullopt, seed};
  validate(spec);
  return spec;
}

SiteData synthetic_sites(std::size_t k, std::size_t p, const Vector& theta, std::size_t group_size,
                         double household_sd, double ate_noise_sd, Rng& rng) {
  if (static_cast<std::size_t>(theta.size()) != p) throw InvalidInput("synthetic_sites: theta length must equal p");
  if (group_size < 2) throw InvalidInput("synthetic_sites: group size must be at least 2");
  SiteData sites(k);
  for (auto& site : sites) {
    site.features.resize(static_cast<Eigen::Index>(p));
    site.features(0) = 1.0;
    for (Eigen::Index j = 1; j < site.features.size(); ++j) site.features(j) = rng.normal();
    const double ate = site.features.dot(theta) + ate_noise_sd * rng.normal();
    const double baseline = rng.normal();
    for (std::size_t i = 0; i < group_size; ++i) site.control.push_back(baseline + household_sd * rng.normal());
    for (std::size_t i = 0; i < group_size; ++i) site.treated.push_back(baseline + ate + household_sd * rng.normal());
  }
  return sites;
}

MomentTable sign_flip_table(const SignFlipOptions& o) {
  if (o.arms < 2 || o.epochs < 1) throw InvalidInput("sign_flip_table: need K >= 2 and T >= 1");
  const auto k = static_cast<Eigen::Index>(o.arms);
  const auto t_count = static_cast<Eigen::Index>(o.epochs);
  MomentTable table;
  table.means.resize(t_count, k);
  table.vars = Matrix::Constant(t_count, k, o.variance);
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const bool even = (t % 2) == 0;
    const double shift = even ? o.epoch_shift : -o.epoch_shift;
    for (Eigen::Index a = 0; a < k; ++a) table.means(t, a) = shift - o.gap;
    // Arm 0 leads the even epochs by 2 * gap, arm 1 leads the odd ones by gap; arm 0 wins on average.
    table.means(t, 0) = shift + (even ? 2.0 * o.gap : 0.0);
    table.means(t, 1) = shift + (even ? 0.0 : o.gap);
  }
  return table;
}

std::vector<Vector> synthetic_pool(std::size_t size, std::size_t p, Rng& rng) {
  std::vector<Vector> pool(size, Vector(static_cast<Eigen::Index>(p)));
  for (auto& x : pool) {
    x(0) = 1.0;
    for (Eigen::Index j = 1; j < x.size(); ++j) x(j) = rng.normal();
  }
  return pool;
}

}  // namespace adaptexp
