#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ringlab/error.hpp"
#include "ringlab/trainer/policy_gradient.hpp"

using namespace ringlab;
using namespace ringlab::trainer;
using advisory::ActionGrid;
using advisory::PolicyKind;
using advisory::PolicyModel;

namespace {

sim::RingConfig toy_ring() {
  sim::RingConfig ring;
  ring.vehicle_count = 8;
  ring.circumference = 126;
  ring.horizon = 600;
  return ring;
}

std::uint64_t hash_parameters(PolicyModel& p) {
  std::uint64_t h = 1469598103934665603ull;
  for (const nn::Parameter* param : p.parameters()) {
    for (double v : param->value.data()) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(&v);
      for (std::size_t i = 0; i < sizeof v; ++i) h = (h ^ bytes[i]) * 1099511628211ull;
    }
  }
  return h;
}

RolloutBatch batch_of(std::initializer_list<double> returns) {
  RolloutBatch b;
  for (double r : returns) b.transitions.push_back({{0.0}, 0, r, r});
  return b;
}

}  // namespace

TEST(Reward, PolicyCentricIsEgoSpeed) {
  sim::RingConfig cfg;
  EXPECT_EQ(reward_pc(sim::make_uniform_fleet(cfg, 8.65)), 8.65);
  EXPECT_EQ(reward_pc(sim::make_uniform_fleet(cfg, 0.0)), 0.0);
}

TEST(Reward, ResidualHandExample) {
  const std::vector<double> v{5, 7}, h{10, 20};
  EXPECT_NEAR(reward_rp(v, h, 10.0, 8.0, RewardParams{}), -10.0, 1e-12);
}

TEST(Reward, ResidualZeroCase) {
  const std::vector<double> z{0, 0, 0};
  EXPECT_EQ(reward_rp(z, z, 4.0, 4.0, RewardParams{}), 0.0);
}

TEST(Reward, ResidualSingleVehicle) {
  const std::vector<double> v{8.65}, h{10.7};
  EXPECT_NEAR(reward_rp(v, h, 3.0, 3.0, RewardParams{}), -2.05, 1e-12);
}

TEST(Reward, ActionSignIsConfigurable) {
  const std::vector<double> v{5, 7}, h{10, 20};
  RewardParams p;
  p.action_sign = 1.0;
  EXPECT_NEAR(reward_rp(v, h, 10.0, 8.0, p), -8.0, 1e-12);
  p.action_sign = 0.5;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Returns, GammaZeroAndOne) {
  const std::vector<double> r{1.0, 2.0, 4.0};
  EXPECT_EQ(discounted_returns(r, 0.0), (std::vector<double>{1.0, 2.0, 4.0}));
  EXPECT_EQ(discounted_returns(r, 1.0), (std::vector<double>{7.0, 6.0, 4.0}));
  const auto half = discounted_returns(r, 0.5);
  EXPECT_DOUBLE_EQ(half[0], 1.0 + 0.5 * 2.0 + 0.25 * 4.0);
}

TEST(Advantages, PerIndexMeanBaseline) {
  const std::vector<RolloutBatch> b{batch_of({3.0, 1.0}), batch_of({1.0, 5.0}), batch_of({2.0})};
  const auto adv = decision_advantages(b, false);
  EXPECT_EQ(adv, (std::vector<double>{1.0, -2.0, -1.0, 2.0, 0.0}));
  for (double a : decision_advantages(std::vector<RolloutBatch>{batch_of({4.0, 4.0}), batch_of({4.0, 4.0})}, true)) {
    EXPECT_EQ(a, 0.0);
  }
}

TEST(Rollout, DecisionCountIsCeilOfHorizonOverHold) {
  sim::RingConfig cfg;
  cfg.horizon = 3000;
  for (auto [delta, expected] : {std::pair{100, 30u}, std::pair{70, 43u}, std::pair{50, 60u}}) {
    RolloutSpec spec;
    spec.kind = PolicyKind::Osl;
    spec.hold_steps = delta;
    EXPECT_EQ(rollout(spec, cfg, 1).decisions, expected);
  }
}

TEST(Rollout, PerfectFollowerOnOslSettlesAtEquilibrium) {
  sim::RingConfig cfg;
  cfg.accel_noise_std = 0.0;
  cfg.init_speed_spread = 0.0;
  RolloutSpec spec;
  spec.kind = PolicyKind::Osl;
  const Episode ep = rollout(spec, cfg, 3);
  const double veq = sim::equilibrium_speed(cfg);
  ASSERT_EQ(ep.ego_speeds.size(), 3000u);
  for (std::size_t t = 1000; t < ep.ego_speeds.size(); ++t) EXPECT_NEAR(ep.ego_speeds[t], veq, 1e-6);
  for (double a : ep.advice) EXPECT_EQ(a, veq);
}

TEST(Rollout, SeededBatchIsBitIdentical) {
  Rng init(2);
  PolicyModel pcp(PolicyKind::Pcp, 50, ActionGrid::make());
  pcp.initialize(init);
  PolicyModel rp(PolicyKind::Rp, 50, ActionGrid::make());
  rp.initialize(init);
  RolloutSpec spec;
  spec.kind = PolicyKind::Rp;
  spec.base = &pcp;
  spec.residual = &rp;
  spec.mode = advisory::ActMode::Sample;
  spec.driver = DriverSpec::sampled();
  spec.reward = RewardKind::Residual;
  spec.record = true;
  const Episode a = rollout(spec, toy_ring(), 77), b = rollout(spec, toy_ring(), 77);
  ASSERT_EQ(a.batch.transitions.size(), 12u);
  for (std::size_t i = 0; i < a.batch.transitions.size(); ++i) {
    EXPECT_EQ(a.batch.transitions[i].action, b.batch.transitions[i].action);
    EXPECT_EQ(a.batch.transitions[i].ret, b.batch.transitions[i].ret);
    EXPECT_EQ(a.batch.transitions[i].input, b.batch.transitions[i].input);
  }
  EXPECT_TRUE(sim::identical(a.record, b.record));
  EXPECT_EQ(a.record.metadata.at("policy"), "rp");
  EXPECT_EQ(driver::read_metadata(a.record.metadata), a.traits);
}

TEST(Rollout, HoldRewardsSumPerStepRewards) {
  RolloutSpec spec;
  spec.kind = PolicyKind::Osl;
  spec.gamma = 0.0;
  const Episode ep = rollout(spec, toy_ring(), 4);
  double total = 0.0;
  for (double v : ep.ego_speeds) total += v;
  EXPECT_NEAR(ep.batch.episode_return, total, 1e-9);
}

TEST(Rollout, CollisionTruncatesWithPenalty) {
  sim::RingConfig cfg = toy_ring();
  cfg.warmup_steps = 0;
  cfg.accel_noise_std = 30.0;  // enough to overpower IDM braking on a tight ring
  cfg.circumference = 8 * 7.5;
  PolicyModel pcp(PolicyKind::Pcp, 50, ActionGrid::make());
  RolloutSpec spec;
  spec.base = &pcp;
  spec.gamma = 1.0;
  int collisions = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Episode ep = rollout(spec, cfg, s);
    if (!ep.batch.collision) continue;
    ++collisions;
    EXPECT_LT(ep.ego_speeds.size(), 600u);
    EXPECT_EQ(ep.decisions, (ep.ego_speeds.size() + 49) / 50);
    double speed_sum = 0.0;
    for (double v : ep.ego_speeds) speed_sum += v;
    EXPECT_NEAR(ep.batch.episode_return, speed_sum - 100.0, 1e-9);
  }
  EXPECT_GT(collisions, 0);
}

TEST(PolicyGradient, ZeroAdvantagesLeaveParametersUnchanged) {
  Rng init(9);
  nn::PerceptronNet net("p", 3, {8}, 4);
  net.initialize(init);
  std::vector<std::vector<double>> inputs{{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}};
  std::vector<Sample> samples{{inputs[0], 1, 0.0, 0.0}, {inputs[1], 3, 0.0, 0.0}};
  std::vector<std::vector<double>> before;
  for (auto* p : net.parameters()) before.push_back(p->value.storage());
  nn::AdamOptimizer opt({.learning_rate = 1e-2});
  ASSERT_TRUE(policy_gradient_step(net, samples, opt, TrainConfig{}));
  std::size_t k = 0;
  for (auto* p : net.parameters()) EXPECT_EQ(p->value.storage(), before[k++]);
}

TEST(PolicyGradient, IdenticalRewardsGiveZeroExpectedUpdate) {
  Rng init(10), rng(11);
  nn::PerceptronNet net("p", 2, {8}, 3);
  net.initialize(init);
  const std::vector<double> x{0.5, -0.5};
  std::vector<std::vector<double>> before;
  for (auto* p : net.parameters()) before.push_back(p->value.storage());
  nn::AdamOptimizer opt({.learning_rate = 1e-3});
  double drift = 0.0;
  for (int batch = 0; batch < 1000; ++batch) {
    std::vector<RolloutBatch> batches;
    for (int k = 0; k < 4; ++k) {
      RolloutBatch b;
      b.transitions.push_back({x, std::uniform_int_distribution<std::size_t>(0, 2)(rng), 1.0, 1.0});
      batches.push_back(b);
    }
    const auto adv = decision_advantages(batches, true);
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < batches.size(); ++i) samples.push_back({batches[i].transitions[0].input, batches[i].transitions[0].action, adv[i], 0.0});
    ASSERT_TRUE(policy_gradient_step(net, samples, opt, TrainConfig{}));
  }
  std::size_t k = 0;
  for (auto* p : net.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) drift += std::abs(p->value[i] - before[k][i]);
    ++k;
  }
  EXPECT_LT(drift, 1e-6);
}

TEST(PolicyGradient, TwoArmedBanditConvergesToRewardingArm) {
  for (auto estimator : {TrainConfig::Estimator::Vanilla, TrainConfig::Estimator::Clipped}) {
    Rng init(12), rng(13);
    nn::PerceptronNet net("bandit", 1, {16}, 2);
    net.initialize(init);
    // Start biased towards the wrong arm.
    net.layers().back().bias().value[1] = 2.0;
    TrainConfig cfg;
    cfg.estimator = estimator;
    cfg.update_epochs = estimator == TrainConfig::Estimator::Clipped ? 4 : 1;
    nn::AdamOptimizer opt({.learning_rate = 1e-2});
    const std::vector<double> x{1.0};
    int converged_at = -1;
    for (int it = 0; it < 200; ++it) {
      std::vector<RolloutBatch> batches;
      for (int k = 0; k < 16; ++k) {
        const std::size_t a = advisory::choose(net.evaluate(x), advisory::ActMode::Sample, rng);
        const double r = a == 0 ? 1.0 : 0.0;
        RolloutBatch b;
        b.transitions.push_back({x, a, r, r});
        batches.push_back(b);
      }
      const auto adv = decision_advantages(batches, cfg.normalize_advantages);
      std::vector<Sample> samples;
      for (std::size_t i = 0; i < batches.size(); ++i) samples.push_back({x, batches[i].transitions[0].action, adv[i], 0.0});
      const auto old = log_probs(net, samples);
      for (std::size_t i = 0; i < samples.size(); ++i) samples[i].old_log_prob = old[i];
      for (int e = 0; e < cfg.update_epochs; ++e) policy_gradient_step(net, samples, opt, cfg);
      if (advisory::choose(net.evaluate(x), advisory::ActMode::Greedy, rng) == 0 && converged_at < 0) converged_at = it;
    }
    EXPECT_GE(converged_at, 0);
    EXPECT_EQ(advisory::choose(net.evaluate(x), advisory::ActMode::Greedy, rng), 0u);
  }
}

TEST(PolicyGradient, NonFiniteAdvantageSkipsUpdate) {
  Rng init(1);
  nn::PerceptronNet net("p", 1, {4}, 2);
  net.initialize(init);
  const std::vector<double> x{1.0};
  std::vector<Sample> samples{{x, 0, std::numeric_limits<double>::quiet_NaN(), 0.0}};
  const auto before = net.layers()[0].weight().value.storage();
  nn::AdamOptimizer opt({.learning_rate = 1e-2});
  EXPECT_FALSE(policy_gradient_step(net, samples, opt, TrainConfig{}));
  EXPECT_EQ(net.layers()[0].weight().value.storage(), before);
}

TEST(Train, ResidualOnToyRingImprovesAndLeavesBaseUntouched) {
  Rng init(1);
  PolicyModel pcp(PolicyKind::Pcp, 50, ActionGrid::make());
  pcp.initialize(init);
  PolicyModel rp(PolicyKind::Rp, 50, ActionGrid::make());
  rp.initialize(init);
  const std::uint64_t base_hash = hash_parameters(pcp);
  RolloutSpec spec;
  spec.kind = PolicyKind::Rp;
  spec.base = &pcp;
  spec.residual = &rp;
  spec.driver = DriverSpec::sampled();
  spec.reward = RewardKind::Residual;
  TrainConfig cfg;
  cfg.iterations = 150;
  cfg.early_stop = false;
  const TrainResult res = train(rp, spec, toy_ring(), cfg);
  ASSERT_EQ(res.curve.size(), 150u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += res.curve[i].mean_return;
    last += res.curve[140 + i].mean_return;
  }
  EXPECT_GT(last / 10.0, first / 10.0);
  EXPECT_EQ(hash_parameters(pcp), base_hash);
  std::ostringstream csv;
  write_learning_curve(res.curve, csv);
  EXPECT_EQ(csv.str().rfind("iteration,mean_return,mean_cf", 0), 0u);
}

TEST(Train, SameSeedReproducesCurve) {
  Rng a(3), b(3);
  PolicyModel p1(PolicyKind::Pcp, 50, ActionGrid::make()), p2(PolicyKind::Pcp, 50, ActionGrid::make());
  p1.initialize(a);
  p2.initialize(b);
  RolloutSpec s1, s2;
  s1.base = &p1;
  s2.base = &p2;
  TrainConfig cfg;
  cfg.iterations = 5;
  cfg.workers = 2;
  const auto r1 = train(p1, s1, toy_ring(), cfg);
  cfg.workers = 1;
  const auto r2 = train(p2, s2, toy_ring(), cfg);
  for (std::size_t i = 0; i < r1.curve.size(); ++i) EXPECT_EQ(r1.curve[i].mean_return, r2.curve[i].mean_return);
  EXPECT_EQ(p1.net().evaluate(std::vector<double>{0.2, 0.2, 0.1}), p2.net().evaluate(std::vector<double>{0.2, 0.2, 0.1}));
}

TEST(Train, RejectsMismatchedSpec) {
  PolicyModel pcp(PolicyKind::Pcp, 50, ActionGrid::make());
  PolicyModel rp(PolicyKind::Rp, 50, ActionGrid::make());
  RolloutSpec spec;
  spec.kind = PolicyKind::Rp;
  spec.residual = &rp;
  EXPECT_THROW(train(rp, spec, toy_ring(), TrainConfig{}), ContractError);
  spec.base = &pcp;
  EXPECT_THROW(train(pcp, spec, toy_ring(), TrainConfig{}), ContractError);
  TrainConfig bad;
  bad.gamma = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}
