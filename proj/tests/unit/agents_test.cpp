#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "adaptexp/agents.hpp"
#include "adaptexp/errors.hpp"

namespace adaptexp {
namespace {

AgentConfig config_for(AgentKind kind, FeatureMap map) {
  AgentConfig c;
  c.kind = kind;
  c.feature_map = map;
  if (kind == AgentKind::BudgetTS) c.costs.assign(map.arms, 1.0);
  return c;
}

Vector random_vector(std::size_t d, Rng& rng) {
  Vector v(d);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

std::vector<double> frequencies(const AgentState& s, const Vector& x, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> f(s.arms, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto d = act(s, x, 0, rng);
    f[rng.categorical(d.probs)] += 1.0 / n;
  }
  return f;
}

/// Feeds `n` random observations through observe, in one batch.
AgentState feed(const AgentState& s, std::size_t n, Rng& rng) {
  std::vector<Vector> xs;
  std::vector<std::size_t> as;
  std::vector<double> rs;
  for (std::size_t i = 0; i < n; ++i) {
    xs.push_back(random_vector(s.map.input_dim(), rng));
    as.push_back(rng.index(s.arms));
    rs.push_back(rng.normal());
  }
  return observe(s, xs, as, rs, 0);
}

TEST(AgentReset, Kinds) {
  const auto ts = agent_reset(config_for(AgentKind::LinearTS, FeatureMap::per_arm_interaction(3, 2)), 3, 6);
  const auto& m = std::get<PosteriorModel>(ts.model);
  EXPECT_EQ(m.posterior.theta(), Vector::Zero(6));
  EXPECT_EQ(m.posterior.sigma(), Matrix::Identity(6, 6));
  EXPECT_EQ(ts.observations, 0u);

  const auto uni = agent_reset(config_for(AgentKind::Uniform, {}), 4, 0);
  EXPECT_TRUE(std::holds_alternative<UniformTally>(uni.model));

  const auto mab = agent_reset(config_for(AgentKind::MabTS, {}), 3, 3);
  EXPECT_EQ(mab.map, FeatureMap::arm_one_hot(3));
  const auto& mm = std::get<PosteriorModel>(mab.model);
  EXPECT_EQ(mm.posterior.dim(), 3u);
  EXPECT_TRUE(mm.posterior.sigma().isDiagonal());

  EXPECT_TRUE(std::holds_alternative<DesignModel>(
      agent_reset(config_for(AgentKind::LinearUCB, FeatureMap::arm_one_hot(3)), 3, 3).model));
}

TEST(AgentReset, RejectsInconsistentConfig) {
  auto c = config_for(AgentKind::LinearTS, FeatureMap::arm_one_hot(3));
  EXPECT_THROW(agent_reset(c, 3, 4), ConfigError);
  EXPECT_THROW(agent_reset(c, 4, 4), ConfigError);
  c.beta = 0.0;
  EXPECT_THROW(agent_reset(c, 3, 3), ConfigError);
  c.beta = 1.5;
  EXPECT_THROW(agent_reset(c, 3, 3), ConfigError);
  c = config_for(AgentKind::LinearUCB, FeatureMap::arm_one_hot(3));
  c.alpha = -1.0;
  EXPECT_THROW(agent_reset(c, 3, 3), ConfigError);
  c = config_for(AgentKind::BudgetTS, FeatureMap::arm_one_hot(3));
  c.costs = {1.0, 0.0, 1.0};
  EXPECT_THROW(agent_reset(c, 3, 3), ConfigError);
  c.costs = {1.0, 1.0};
  EXPECT_THROW(agent_reset(c, 3, 3), ConfigError);
  EXPECT_THROW(agent_kind_from_string("thompson"), ConfigError);
}

TEST(AgentKinds, NamesRoundTrip) {
  EXPECT_EQ(all_agent_kinds().size(), 8u);
  for (auto k : all_agent_kinds()) EXPECT_EQ(agent_kind_from_string(to_string(k)), k);
}

TEST(Act, UniformQuarter) {
  const auto s = agent_reset(config_for(AgentKind::Uniform, {}), 4, 0);
  Rng rng(0);
  const auto d = act(s, Vector(), 0, rng);
  EXPECT_EQ(d.probs, (std::vector<double>{0.25, 0.25, 0.25, 0.25}));
}

TEST(Act, LinearTsMatchesNormalDifference) {
  auto s = agent_reset(config_for(AgentKind::LinearTS, FeatureMap::arm_one_hot(2)), 2, 2);
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(2) << 0.0, 1.0).finished(), Matrix::Identity(2, 2)));
  const auto f = frequencies(s, Vector(), 100000, 1);
  const double oracle = 0.5 * std::erfc(-(1.0 / std::sqrt(2.0)) / std::sqrt(2.0));
  EXPECT_NEAR(oracle, 0.7602, 1e-4);
  EXPECT_NEAR(f[1], oracle, 0.01);
}

TEST(Act, LinearUcbHandArithmetic) {
  auto s = agent_reset(config_for(AgentKind::LinearUCB, FeatureMap::arm_one_hot(2)), 2, 2);
  auto& m = std::get<DesignModel>(s.model);
  m.design.v = Matrix::Identity(2, 2);
  m.design.b = (Vector(2) << 1.0, 0.0).finished();
  m.v_factor.compute(m.design.v);
  m.theta_hat = m.v_factor.solve(m.design.b);
  // indices: 1 + 1 = 2 and 0 + 1 = 1
  Rng rng(0);
  EXPECT_EQ(act(s, Vector(), 0, rng).probs, (std::vector<double>{1.0, 0.0}));
}

TEST(Act, UcbAlphaScheduleOverridesConstant) {
  auto c = config_for(AgentKind::LinearUCB, FeatureMap::arm_one_hot(2));
  c.alpha = 0.0;
  auto s = agent_reset(c, 2, 2);
  const std::vector<Vector> xs(5, Vector());
  s = observe(s, xs, std::vector<std::size_t>{0, 0, 0, 0, 1}, std::vector<double>{1, 1, 1, 1, 0.5}, 0);
  Rng rng(0);
  EXPECT_EQ(act(s, Vector(), 0, rng).probs[0], 1.0);
  s.config.alpha_schedule = [](std::size_t epoch) { return epoch == 0 ? 0.0 : 10.0; };
  EXPECT_EQ(act(s, Vector(), 0, rng).probs[0], 1.0);
  EXPECT_EQ(act(s, Vector(), 1, rng).probs[1], 1.0);
}

TEST(Act, BudgetTsRatio) {
  auto c = config_for(AgentKind::BudgetTS, FeatureMap::arm_one_hot(2));
  c.costs = {1.0, 2.0};
  auto s = agent_reset(c, 2, 2);
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(2) << 2.0, 1.0).finished(), Matrix::Zero(2, 2)));
  Rng rng(0);
  const auto d = act(s, Vector(), 0, rng);
  EXPECT_NEAR(d.probs[0], 0.8, 1e-12);
  EXPECT_NEAR(d.probs[1], 0.2, 1e-12);
}

TEST(Act, BudgetTsClampsNegativeDraws) {
  auto c = config_for(AgentKind::BudgetTS, FeatureMap::arm_one_hot(3));
  auto s = agent_reset(c, 3, 3);
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(3) << -1.0, 1.0, -5.0).finished(), Matrix::Zero(3, 3)));
  Rng rng(0);
  const auto d = act(s, Vector(), 0, rng);
  EXPECT_TRUE(d.valid());
  EXPECT_NEAR(d.probs[1], 1.0, 1e-8);
  EXPECT_GT(d.probs[0], 0.0);
}

TEST(Act, LinearEiPicksLargestIndex) {
  auto s = agent_reset(config_for(AgentKind::LinearEI, FeatureMap::arm_one_hot(3)), 3, 3);
  Matrix sigma = Matrix::Zero(3, 3);
  sigma.diagonal() << 0.01, 4.0, 0.0;
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(3) << 1.0, 0.5, 0.9).finished(), sigma));
  Rng rng(0);
  const double means[] = {1.0, 0.5, 0.9};
  std::vector<double> ei;
  for (int a = 0; a < 3; ++a) ei.push_back(expected_improvement(means[a], std::sqrt(sigma(a, a)), 1.0));
  EXPECT_GT(ei[1], ei[0]);
  EXPECT_EQ(act(s, Vector(), 0, rng).probs[1], 1.0);
}

TEST(ExpectedImprovement, ValuesAndNonnegativity) {
  EXPECT_DOUBLE_EQ(expected_improvement(1.0, 0.0, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(expected_improvement(0.2, 0.0, 0.5), 0.0);
  // z = 0: sd * pdf(0)
  EXPECT_NEAR(expected_improvement(1.0, 2.0, 1.0), 2.0 / std::sqrt(2.0 * M_PI), 1e-14);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double m = rng.normal() * 10.0;
    EXPECT_GE(expected_improvement(m, std::abs(rng.normal()) * 3.0, m + std::abs(rng.normal()) * 20.0), 0.0);
  }
}

TEST(Act, TttsBetaOneMatchesTs) {
  Rng init(9);
  const auto map = FeatureMap::per_arm_interaction(4, 2);
  auto ts = agent_reset(config_for(AgentKind::LinearTS, map), 4, 8);
  ts = feed(ts, 6, init);
  auto cfg = config_for(AgentKind::LinearTTTS, map);
  cfg.beta = 1.0;
  auto ttts = agent_reset(cfg, 4, 8);
  ttts = with_posterior(ttts, std::get<PosteriorModel>(ts.model).posterior);
  const Vector x = random_vector(2, init);
  const auto a = frequencies(ts, x, 100000, 1);
  const auto b = frequencies(ttts, x, 100000, 2);
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) tv += 0.5 * std::abs(a[i] - b[i]);
  EXPECT_LT(tv, 0.01);
}

TEST(Act, TttsLowBetaFavoursChallenger) {
  auto cfg = config_for(AgentKind::MabTTTS, {});
  cfg.beta = 0.2;
  auto s = agent_reset(cfg, 2, 2);
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(2) << 1.0, 0.0).finished(), Matrix::Zero(2, 2)));
  // Degenerate posterior: every redraw agrees with the leader, so the fallback runner-up is played.
  const auto f = frequencies(s, Vector(), 20000, 4);
  EXPECT_NEAR(f[1], 0.8, 0.02);
}

TEST(Act, DistributionsAreValidForAllAgents) {
  Rng rng(12);
  const auto map = FeatureMap::per_arm_interaction(5, 3);
  for (auto kind : all_agent_kinds()) {
    auto cfg = config_for(kind, map);
    cfg.costs = {1.0, 2.0, 0.5, 3.0, 1.5};
    const std::size_t d = kind == AgentKind::MabTS || kind == AgentKind::MabTTTS ? 5 : (kind == AgentKind::Uniform ? 0 : 15);
    auto s = agent_reset(cfg, 5, d);
    for (int round = 0; round < 5; ++round) {
      for (int i = 0; i < 20; ++i) {
        const auto dist = act(s, random_vector(3, rng), 0, rng);
        ASSERT_EQ(dist.probs.size(), 5u);
        EXPECT_TRUE(dist.valid()) << to_string(kind);
      }
      std::vector<Vector> xs;
      std::vector<std::size_t> as;
      std::vector<double> rs;
      for (int i = 0; i < 10; ++i) {
        xs.push_back(random_vector(3, rng));
        as.push_back(rng.index(5));
        rs.push_back(3.0 * rng.normal());
      }
      s = observe(s, xs, as, rs, 0);
    }
  }
}

TEST(Act, RejectsWrongContextLength) {
  const auto s = agent_reset(config_for(AgentKind::LinearTS, FeatureMap::per_arm_interaction(2, 3)), 2, 6);
  Rng rng(0);
  EXPECT_THROW(act(s, Vector::Zero(2), 0, rng), InvalidInput);
}

TEST(ActBatch, PerBatchDrawSharesTheta) {
  auto cfg = config_for(AgentKind::MabTS, {});
  cfg.draw_per_batch = true;
  const auto s = agent_reset(cfg, 6, 6);
  const std::vector<Vector> xs(50, Vector());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto dists = act_batch(s, xs, 0, rng);
    for (const auto& d : dists) EXPECT_EQ(d.probs, dists.front().probs);
  }
  cfg.draw_per_batch = false;
  Rng rng(1);
  const auto dists = act_batch(agent_reset(cfg, 6, 6), xs, 0, rng);
  bool differ = false;
  for (const auto& d : dists) differ = differ || d.probs != dists.front().probs;
  EXPECT_TRUE(differ);
}

TEST(OptimalArmProbabilities, MonteCarloEstimate) {
  auto s = agent_reset(config_for(AgentKind::LinearTS, FeatureMap::arm_one_hot(2)), 2, 2);
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(2) << 0.0, 1.0).finished(), Matrix::Identity(2, 2)));
  Rng rng(5);
  const auto p = optimal_arm_probabilities(s, Vector(), 0, rng, 50000);
  EXPECT_TRUE(p.valid());
  EXPECT_NEAR(p.probs[1], 0.7602, 0.01);
}

TEST(Observe, EmptyBatchAndUniform) {
  Rng rng(1);
  auto s = agent_reset(config_for(AgentKind::LinearTS, FeatureMap::per_arm_interaction(3, 2)), 3, 6);
  s = feed(s, 4, rng);
  const auto same = observe(s, {}, {}, {}, 0);
  EXPECT_EQ(std::get<PosteriorModel>(same.model).posterior.theta(), std::get<PosteriorModel>(s.model).posterior.theta());
  EXPECT_EQ(same.observations, s.observations);

  auto u = agent_reset(config_for(AgentKind::Uniform, {}), 3, 0);
  const auto before = act(u, Vector(), 0, rng).probs;
  u = observe(u, std::vector<Vector>(3, Vector()), std::vector<std::size_t>{0, 1, 1}, std::vector<double>{5, 1, 2}, 0);
  EXPECT_EQ(act(u, Vector(), 0, rng).probs, before);
}

TEST(Observe, LengthMismatch) {
  auto s = agent_reset(config_for(AgentKind::MabTS, {}), 2, 2);
  EXPECT_THROW(observe(s, std::vector<Vector>(2, Vector()), std::vector<std::size_t>{0}, std::vector<double>{1.0}, 0),
               InvalidInput);
  EXPECT_THROW(observe(s, std::vector<Vector>(1, Vector()), std::vector<std::size_t>{2}, std::vector<double>{1.0}, 0),
               InvalidInput);
}

TEST(Observe, BatchEqualsSingletonFold) {
  Rng rng(4);
  const auto map = FeatureMap::per_arm_interaction(3, 2);
  for (auto kind : {AgentKind::LinearTS, AgentKind::LinearUCB}) {
    const auto s0 = agent_reset(config_for(kind, map), 3, 6);
    std::vector<Vector> xs;
    std::vector<std::size_t> as;
    std::vector<double> rs;
    for (int i = 0; i < 12; ++i) {
      xs.push_back(random_vector(2, rng));
      as.push_back(rng.index(3));
      rs.push_back(rng.normal());
    }
    const auto batch = observe(s0, xs, as, rs, 0);
    auto seq = s0;
    for (std::size_t i = 0; i < xs.size(); ++i)
      seq = observe(seq, std::span(&xs[i], 1), std::span(&as[i], 1), std::span(&rs[i], 1), 0);
    EXPECT_EQ(batch.observations, seq.observations);
    if (kind == AgentKind::LinearTS) {
      const auto& a = std::get<PosteriorModel>(batch.model).posterior;
      const auto& b = std::get<PosteriorModel>(seq.model).posterior;
      EXPECT_LT((a.theta() - b.theta()).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LT((a.sigma() - b.sigma()).cwiseAbs().maxCoeff(), 1e-8);
    } else {
      const auto& a = std::get<DesignModel>(batch.model);
      const auto& b = std::get<DesignModel>(seq.model);
      EXPECT_LT((a.design.v - b.design.v).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((a.theta_hat - b.theta_hat).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Exploit, StrictBestAndTie) {
  auto s = agent_reset(config_for(AgentKind::LinearTS, FeatureMap::arm_one_hot(3)), 3, 3);
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(3) << 0.1, 0.2, 0.9).finished(), Matrix::Identity(3, 3)));
  const std::vector<Vector> one(1, Vector());
  EXPECT_EQ(exploit(s, one, EpochMode::TerminalAverage).arms, std::vector<std::size_t>{2});
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(3) << 0.5, 0.5, 0.1).finished(), Matrix::Identity(3, 3)));
  EXPECT_EQ(exploit(s, one, EpochMode::TerminalAverage).arms, std::vector<std::size_t>{0});
}

TEST(Exploit, MatchesEnumerationForKnownTheta) {
  Rng rng(31);
  const auto map = FeatureMap::per_arm_interaction(4, 3);
  const Vector theta = random_vector(12, rng);
  auto s = agent_reset(config_for(AgentKind::LinearTS, map), 4, 12);
  s = with_posterior(s, GaussianPosterior::from_moments(theta, Matrix::Identity(12, 12)));
  std::vector<Vector> xs;
  for (int i = 0; i < 50; ++i) xs.push_back(random_vector(3, rng));
  const auto got = exploit(s, xs, EpochMode::TerminalAverage).arms;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < 4; ++a)
      if (featurize(map, xs[i], a).dot(theta) > featurize(map, xs[i], best).dot(theta)) best = a;
    EXPECT_EQ(got[i], best);
  }
}

TEST(Exploit, UniformUsesEmpiricalMeansAndFallsBack) {
  auto u = agent_reset(config_for(AgentKind::Uniform, {}), 3, 0);
  const std::vector<Vector> ctx(2, Vector());
  const auto none = exploit(u, ctx, EpochMode::TerminalAverage);
  EXPECT_TRUE(none.fallback);
  EXPECT_EQ(none.arms, (std::vector<std::size_t>{0, 0}));
  u = observe(u, std::vector<Vector>(4, Vector()), std::vector<std::size_t>{0, 1, 1, 2},
              std::vector<double>{1.0, 3.0, 2.0, 2.4}, 0);
  const auto r = exploit(u, ctx, EpochMode::TerminalAverage);
  EXPECT_FALSE(r.fallback);
  EXPECT_EQ(r.arms, (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(rank_arms(u, ctx, EpochMode::TerminalAverage), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Exploit, TemporalTerminalAverageVersusPerEpoch) {
  const auto map = FeatureMap::epoch_arm_one_hot(2, 2);
  auto s = agent_reset(config_for(AgentKind::LinearTS, map), 2, 4);
  // [e_t, e_a] additive: arm 1 has the larger arm effect.
  s = with_posterior(s, GaussianPosterior::from_moments((Vector(4) << 5.0, -5.0, 0.0, 1.0).finished(),
                                                        Matrix::Identity(4, 4)));
  const std::vector<Vector> one(1, Vector());
  EXPECT_EQ(exploit(s, one, EpochMode::TerminalAverage).arms[0], 1u);
  const auto pred = predicted_rewards(s, Vector(), EpochMode::TerminalAverage);
  EXPECT_DOUBLE_EQ(pred[0], 0.0);
  EXPECT_DOUBLE_EQ(pred[1], 1.0);
  EXPECT_DOUBLE_EQ(predicted_rewards(s, Vector(), EpochMode::PerEpoch, 0)[1], 6.0);
}

TEST(Exploit, ArgmaxScaleInvariance) {
  Rng rng(41);
  const auto map = FeatureMap::per_arm_interaction(4, 2);
  for (int trial = 0; trial < 20; ++trial) {
    auto ucb = agent_reset(config_for(AgentKind::LinearUCB, map), 4, 8);
    ucb = feed(ucb, 10, rng);
    auto ei = agent_reset(config_for(AgentKind::LinearEI, map), 4, 8);
    ei = feed(ei, 10, rng);
    const double c = 0.1 + 5.0 * rng.uniform();
    const Vector x = random_vector(2, rng);

    auto ucb_scaled = ucb;
    auto& dm = std::get<DesignModel>(ucb_scaled.model);
    dm.design.b *= c;
    dm.theta_hat *= c;
    ucb_scaled.config.alpha *= c;

    const auto& pm = std::get<PosteriorModel>(ei.model).posterior;
    const auto ei_scaled = with_posterior(ei, GaussianPosterior::from_moments(c * pm.theta(), c * c * pm.sigma()));

    Rng r1(0), r2(0);
    EXPECT_EQ(act(ucb, x, 0, r1).probs, act(ucb_scaled, x, 0, r2).probs);
    EXPECT_EQ(act(ei, x, 0, r1).probs, act(ei_scaled, x, 0, r2).probs);
    const std::vector<Vector> xs{x};
    EXPECT_EQ(exploit(ucb, xs, EpochMode::TerminalAverage).arms, exploit(ucb_scaled, xs, EpochMode::TerminalAverage).arms);
    EXPECT_EQ(exploit(ei, xs, EpochMode::TerminalAverage).arms, exploit(ei_scaled, xs, EpochMode::TerminalAverage).arms);
  }
}

}  // namespace
}  // namespace adaptexp
