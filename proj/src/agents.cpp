#include "adaptexp/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "adaptexp/errors.hpp"

namespace adaptexp {

namespace {

constexpr std::size_t kChallengerRedraws = 100;
constexpr double kBudgetFloor = 1e-9;

bool uses_posterior(AgentKind k) {
  switch (k) {
    case AgentKind::LinearTS:
    case AgentKind::LinearTTTS:
    case AgentKind::LinearEI:
    case AgentKind::BudgetTS:
    case AgentKind::MabTS:
    case AgentKind::MabTTTS: return true;
    default: return false;
  }
}

bool samples_posterior(AgentKind k) { return uses_posterior(k) && k != AgentKind::LinearEI; }

bool is_mab(AgentKind k) { return k == AgentKind::MabTS || k == AgentKind::MabTTTS; }

/// First index of the maximum; NaN entries never win.
std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > best_value) {
      best_value = v[i];
      best = i;
    }
  }
  return best;
}

std::vector<double> scores(const FeatureMap& map, const Vector& x, std::size_t epoch, const Vector& theta,
                           std::size_t k) {
  std::vector<double> s(k);
  for (std::size_t a = 0; a < k; ++a) s[a] = linear_score(map, x, a, epoch, theta);
  return s;
}

std::size_t sampled_leader(const AgentState& state, const Vector& x, std::size_t epoch, const Vector& theta) {
  return argmax(scores(state.map, x, epoch, theta, state.arms));
}

std::size_t second_best(const std::vector<double>& s, std::size_t leader) {
  std::size_t best = leader == 0 ? 1 : 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != leader && s[i] > s[best]) best = i;
  }
  return best;
}

void check_context(const AgentState& state, const Vector& context) {
  if (state.map.uses_context() && static_cast<std::size_t>(context.size()) != state.map.input_dim()) {
    throw InvalidInput("context length " + std::to_string(context.size()) + " does not match feature map input " +
                       std::to_string(state.map.input_dim()));
  }
}

double ucb_alpha(const AgentConfig& c, std::size_t epoch) { return c.alpha_schedule ? c.alpha_schedule(epoch) : c.alpha; }

/// Leader/challenger logic given an already drawn first sample.
std::size_t top_two_choice(const AgentState& state, const PosteriorModel& m, const Vector& x, std::size_t epoch,
                           const Vector& first, Rng& rng) {
  const auto first_scores = scores(state.map, x, epoch, first, state.arms);
  const std::size_t leader = argmax(first_scores);
  if (rng.uniform() < state.config.beta || state.arms < 2) return leader;
  for (std::size_t r = 0; r < kChallengerRedraws; ++r) {
    const std::size_t challenger = sampled_leader(state, x, epoch, m.sampler.draw(rng));
    if (challenger != leader) return challenger;
  }
  return second_best(first_scores, leader);
}

AssignmentDistribution act_with_draw(const AgentState& state, const Vector& x, std::size_t epoch, Rng& rng,
                                     const Vector* shared_draw) {
  const std::size_t k = state.arms;
  const AgentKind kind = state.config.kind;
  if (kind == AgentKind::Uniform) return AssignmentDistribution::uniform(k);
  check_context(state, x);

  if (const auto* m = std::get_if<PosteriorModel>(&state.model)) {
    switch (kind) {
      case AgentKind::LinearTS:
      case AgentKind::MabTS: {
        const Vector theta = shared_draw ? *shared_draw : m->sampler.draw(rng);
        return AssignmentDistribution::point_mass(k, sampled_leader(state, x, epoch, theta));
      }
      case AgentKind::LinearTTTS:
      case AgentKind::MabTTTS: {
        const Vector first = shared_draw ? *shared_draw : m->sampler.draw(rng);
        return AssignmentDistribution::point_mass(k, top_two_choice(state, *m, x, epoch, first, rng));
      }
      case AgentKind::BudgetTS: {
        const Vector theta = shared_draw ? *shared_draw : m->sampler.draw(rng);
        AssignmentDistribution dist;
        dist.probs.resize(k);
        double total = 0.0;
        for (std::size_t a = 0; a < k; ++a) {
          dist.probs[a] = std::max(linear_score(state.map, x, a, epoch, theta), kBudgetFloor) / state.config.costs[a];
          total += dist.probs[a];
        }
        for (auto& p : dist.probs) p /= total;
        return dist;
      }
      case AgentKind::LinearEI: {
        std::vector<double> means(k), sds(k);
        for (std::size_t a = 0; a < k; ++a) {
          const auto pred = predictive_mean_var(m->posterior, featurize(state.map, x, a, epoch));
          means[a] = pred.mean;
          sds[a] = std::sqrt(pred.var);
        }
        const double best = *std::max_element(means.begin(), means.end());
        std::vector<double> ei(k);
        for (std::size_t a = 0; a < k; ++a) ei[a] = expected_improvement(means[a], sds[a], best);
        return AssignmentDistribution::point_mass(k, argmax(ei));
      }
      default: break;
    }
  }
  if (const auto* m = std::get_if<DesignModel>(&state.model)) {
    const double alpha = ucb_alpha(state.config, epoch);
    std::vector<double> index(k);
    for (std::size_t a = 0; a < k; ++a) {
      const Vector phi = featurize(state.map, x, a, epoch);
      const double width = std::sqrt(std::max(phi.dot(m->v_factor.solve(phi)), 0.0));
      index[a] = phi.dot(m->theta_hat) + alpha * width;
    }
    return AssignmentDistribution::point_mass(k, argmax(index));
  }
  throw StateError("agent state does not match its kind");
}

}  // namespace

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::Uniform: return "uniform";
    case AgentKind::LinearTS: return "linear_ts";
    case AgentKind::LinearTTTS: return "linear_ttts";
    case AgentKind::LinearUCB: return "linear_ucb";
    case AgentKind::LinearEI: return "linear_ei";
    case AgentKind::BudgetTS: return "budget_ts";
    case AgentKind::MabTS: return "mab_ts";
    case AgentKind::MabTTTS: return "mab_ttts";
  }
  return "unknown";
}

const std::vector<AgentKind>& all_agent_kinds() {
  static const std::vector<AgentKind> kinds{AgentKind::Uniform,  AgentKind::LinearTS, AgentKind::LinearTTTS,
                                            AgentKind::LinearUCB, AgentKind::LinearEI, AgentKind::BudgetTS,
                                            AgentKind::MabTS,    AgentKind::MabTTTS};
  return kinds;
}

AgentKind agent_kind_from_string(const std::string& name) {
  for (auto k : all_agent_kinds()) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("kind", "unknown agent kind '" + name + "'");
}

AssignmentDistribution AssignmentDistribution::uniform(std::size_t k) {
  return {std::vector<double>(k, 1.0 / static_cast<double>(k))};
}

AssignmentDistribution AssignmentDistribution::point_mass(std::size_t k, std::size_t arm) {
  AssignmentDistribution d{std::vector<double>(k, 0.0)};
  d.probs.at(arm) = 1.0;
  return d;
}

bool AssignmentDistribution::valid(double tol) const {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) return false;
    total += p;
  }
  return std::abs(total - 1.0) <= tol;
}

void validate(const AgentConfig& c, std::size_t k) {
  if (!(c.beta > 0.0 && c.beta <= 1.0)) throw ConfigError("beta", "must lie in (0, 1]");
  if (!(c.alpha >= 0.0)) throw ConfigError("alpha", "must be nonnegative");
  if (!(c.prior_var > 0.0)) throw ConfigError("prior_var", "must be positive");
  if (!(c.noise_s2 > 0.0)) throw ConfigError("noise_s2", "must be positive");
  if (!(c.ridge > 0.0)) throw ConfigError("ridge", "must be positive");
  if (c.ts_draws == 0) throw ConfigError("ts_draws", "must be positive");
  if (c.kind == AgentKind::BudgetTS && c.costs.size() != k) {
    throw ConfigError("costs", "budget_ts needs one cost per arm (" + std::to_string(k) + ")");
  }
  for (std::size_t a = 0; a < c.costs.size(); ++a) {
    if (!(c.costs[a] > 0.0)) throw ConfigError("costs[" + std::to_string(a) + "]", "cost must be positive");
  }
  if (!is_mab(c.kind) && c.kind != AgentKind::Uniform && c.feature_map.arms != k) {
    throw ConfigError("feature_map.arms", "feature map has " + std::to_string(c.feature_map.arms) +
                                              " arms, environment has " + std::to_string(k));
  }
}

AgentState agent_reset(const AgentConfig& config, std::size_t k, std::size_t d) {
  if (k < 1) throw ConfigError("k", "need at least one arm");
  validate(config, k);
  AgentState state;
  state.config = config;
  state.arms = k;
  state.map = is_mab(config.kind) || config.kind == AgentKind::Uniform ? FeatureMap::arm_one_hot(k) : config.feature_map;
  if (config.kind == AgentKind::Uniform) {
    state.model = UniformTally{std::vector<double>(k, 0.0), std::vector<std::size_t>(k, 0)};
    return state;
  }
  if (d != state.map.dim()) {
    throw ConfigError("feature_map", "dimension " + std::to_string(state.map.dim()) + " does not match d=" +
                                         std::to_string(d));
  }
  if (uses_posterior(config.kind)) {
    PosteriorModel m{isotropic_prior(d, config.prior_var), NoiseModel{config.noise_s2}, {}};
    if (samples_posterior(config.kind)) m.sampler = GaussianSampler(m.posterior);
    state.model = std::move(m);
  } else {
    DesignModel m{design_reset(d, config.ridge), Vector::Zero(static_cast<Eigen::Index>(d)), {}};
    m.v_factor.compute(m.design.v);
    state.model = std::move(m);
  }
  return state;
}

AgentState with_posterior(const AgentState& state, GaussianPosterior posterior) {
  auto* m = std::get_if<PosteriorModel>(&state.model);
  if (!m) throw StateError("agent is not posterior-backed");
  if (posterior.dim() != m->posterior.dim()) throw InvalidInput("posterior dimension mismatch");
  AgentState next = state;
  auto& nm = std::get<PosteriorModel>(next.model);
  nm.posterior = std::move(posterior);
  if (samples_posterior(state.config.kind)) nm.sampler = GaussianSampler(nm.posterior);
  return next;
}

AssignmentDistribution act(const AgentState& state, const Vector& context, std::size_t epoch, Rng& rng) {
  return act_with_draw(state, context, epoch, rng, nullptr);
}

std::vector<AssignmentDistribution> act_batch(const AgentState& state, std::span<const Vector> contexts,
                                              std::size_t epoch, Rng& rng) {
  std::vector<AssignmentDistribution> out;
  out.reserve(contexts.size());
  std::optional<Vector> shared;
  if (state.config.draw_per_batch && samples_posterior(state.config.kind)) {
    shared = std::get<PosteriorModel>(state.model).sampler.draw(rng);
  }
  for (const auto& x : contexts) out.push_back(act_with_draw(state, x, epoch, rng, shared ? &*shared : nullptr));
  return out;
}

AssignmentDistribution optimal_arm_probabilities(const AgentState& state, const Vector& context, std::size_t epoch,
                                                 Rng& rng, std::optional<std::size_t> draws) {
  const auto* m = std::get_if<PosteriorModel>(&state.model);
  if (!m || !samples_posterior(state.config.kind)) return act(state, context, epoch, rng);
  check_context(state, context);
  const std::size_t n = draws.value_or(state.config.ts_draws);
  AssignmentDistribution dist{std::vector<double>(state.arms, 0.0)};
  for (std::size_t i = 0; i < n; ++i) dist.probs[sampled_leader(state, context, epoch, m->sampler.draw(rng))] += 1.0;
  for (auto& p : dist.probs) p /= static_cast<double>(n);
  return dist;
}

AgentState observe(const AgentState& state, std::span<const Vector> contexts, std::span<const std::size_t> assignments,
                   std::span<const double> outcomes, std::size_t epoch) {
  if (contexts.size() != assignments.size() || assignments.size() != outcomes.size()) {
    throw InvalidInput("observe: contexts, assignments and outcomes must share one length");
  }
  if (assignments.empty()) return state;
  for (std::size_t a : assignments) {
    if (a >= state.arms) throw InvalidInput("observe: arm " + std::to_string(a) + " out of range");
  }
  AgentState next = state;
  next.observations += assignments.size();

  if (auto* tally = std::get_if<UniformTally>(&next.model)) {
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (!std::isfinite(outcomes[i])) throw InvalidInput("observe: non-finite outcome");
      tally->sums[assignments[i]] += outcomes[i];
      ++tally->counts[assignments[i]];
    }
    return next;
  }

  std::vector<Vector> rows;
  rows.reserve(assignments.size());
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    check_context(state, contexts[i]);
    rows.push_back(featurize(state.map, contexts[i], assignments[i], epoch));
  }
  if (auto* m = std::get_if<PosteriorModel>(&next.model)) {
    m->posterior = posterior_update(m->posterior, m->noise, rows, outcomes);
    if (samples_posterior(state.config.kind)) m->sampler = GaussianSampler(m->posterior);
  } else if (auto* m = std::get_if<DesignModel>(&next.model)) {
    for (double r : outcomes) {
      if (!std::isfinite(r)) throw InvalidInput("observe: non-finite outcome");
    }
    m->design = design_update(m->design, rows, outcomes);
    m->v_factor.compute(m->design.v);
    m->theta_hat = m->v_factor.solve(m->design.b);
  }
  return next;
}

std::vector<double> predicted_rewards(const AgentState& state, const Vector& context, EpochMode mode,
                                      std::size_t epoch) {
  const std::size_t k = state.arms;
  std::vector<double> out(k);
  if (const auto* tally = std::get_if<UniformTally>(&state.model)) {
    for (std::size_t a = 0; a < k; ++a) {
      out[a] = tally->counts[a] ? tally->sums[a] / static_cast<double>(tally->counts[a])
                                : -std::numeric_limits<double>::infinity();
    }
    return out;
  }
  check_context(state, context);
  const Vector& theta = std::holds_alternative<PosteriorModel>(state.model)
                            ? std::get<PosteriorModel>(state.model).posterior.theta()
                            : std::get<DesignModel>(state.model).theta_hat;
  if (state.map.temporal() && mode == EpochMode::TerminalAverage) {
    const auto t_count = static_cast<Eigen::Index>(state.map.epochs);
    const double temporal = theta.head(t_count).mean();
    for (std::size_t a = 0; a < k; ++a) out[a] = temporal + theta(t_count + static_cast<Eigen::Index>(a));
    return out;
  }
  for (std::size_t a = 0; a < k; ++a) out[a] = linear_score(state.map, context, a, epoch, theta);
  return out;
}

ExploitResult exploit(const AgentState& state, std::span<const Vector> contexts, EpochMode mode, std::size_t epoch) {
  ExploitResult result;
  result.arms.reserve(contexts.size());
  if (const auto* tally = std::get_if<UniformTally>(&state.model)) {
    const bool any = std::any_of(tally->counts.begin(), tally->counts.end(), [](std::size_t c) { return c > 0; });
    if (!any) {
      result.fallback = true;
      result.arms.assign(contexts.size(), 0);
      return result;
    }
  }
  for (const auto& x : contexts) result.arms.push_back(argmax(predicted_rewards(state, x, mode, epoch)));
  return result;
}

std::vector<std::size_t> rank_arms(const AgentState& state, std::span<const Vector> contexts, EpochMode mode,
                                   std::size_t epoch) {
  const std::size_t k = state.arms;
  std::vector<double> avg(k, 0.0);
  const Vector empty;
  if (contexts.empty()) {
    avg = predicted_rewards(state, empty, mode, epoch);
  } else {
    for (const auto& x : contexts) {
      const auto p = predicted_rewards(state, x, mode, epoch);
      for (std::size_t a = 0; a < k; ++a) avg[a] += p[a];
    }
  }
  std::vector<std::size_t> order(k);
  for (std::size_t a = 0; a < k; ++a) order[a] = a;
  // Unobserved arms (-inf) sort last; stable sort keeps the lowest index first among ties.
  std::stable_sort(order.begin(), order.end(), [&avg](std::size_t a, std::size_t b) { return avg[a] > avg[b]; });
  return order;
}

double expected_improvement(double mean, double sd, double best_mean) {
  const double diff = mean - best_mean;
  if (!(sd > 0.0)) return std::max(diff, 0.0);
  const double z = diff / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return std::max(sd * (z * cdf + pdf), 0.0);
}

}  // namespace adaptexp
