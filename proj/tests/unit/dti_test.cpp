#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "ringlab/dti/dti.hpp"
#include "ringlab/error.hpp"
#include "ringlab/trainer/rollout.hpp"

using namespace ringlab;
using namespace ringlab::dti;
using nn::Graph;
using nn::Tensor;

namespace {

DtiConfig small_config() {
  DtiConfig cfg;
  cfg.window = 6;
  cfg.hidden = 5;
  cfg.latent = 2;
  return cfg;
}

Window random_window(std::size_t steps, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Window w(steps * kFeatures);
  for (double& v : w) v = u(rng);
  return w;
}

Window smooth_window(std::size_t steps, double phase) {
  Window w;
  for (std::size_t t = 0; t < steps; ++t) {
    const double s = static_cast<double>(t) / static_cast<double>(steps);
    w.push_back(0.25 + 0.1 * std::sin(6.0 * s + phase));
    w.push_back(0.25 + 0.1 * std::cos(4.0 * s + phase));
    w.push_back(0.02 + 0.01 * s);
  }
  return w;
}

std::vector<LabeledWindow> labeled(std::vector<Window> xs) {
  std::vector<LabeledWindow> out;
  for (auto& x : xs) {
    LabeledWindow w;
    w.x = std::move(x);
    out.push_back(std::move(w));
  }
  return out;
}

double loss_value(const Tensor& x_hat, const Tensor& x, const Tensor& mu, const Tensor& log_var, double beta_kl) {
  Graph g;
  return dti_loss(g.constant(x_hat), g.constant(x), g.constant(mu), g.constant(log_var), 1.0, beta_kl)
      .total.value()
      .item();
}

}  // namespace

TEST(DtiLoss, PerfectReconstructionAndPriorGiveZero) {
  const Tensor x = Tensor::row({0.1, 0.2, 0.3});
  EXPECT_DOUBLE_EQ(loss_value(x, x, Tensor::row({0.0, 0.0}), Tensor::row({0.0, 0.0}), 1e-6), 0.0);
}

TEST(DtiLoss, UnitMeanShiftCostsHalfBetaKl) {
  const Tensor x = Tensor::row({0.1, 0.2, 0.3});
  EXPECT_NEAR(loss_value(x, x, Tensor::row({1.0, 0.0}), Tensor::row({0.0, 0.0}), 1e-6), 5e-7, 1e-18);
}

TEST(DtiLoss, ReconstructionIsEuclideanNorm) {
  const Tensor x = Tensor::row({0.0, 0.0, 0.0, 0.0});
  const Tensor x_hat = Tensor::row({1.0, 1.0, 1.0, 1.0});
  EXPECT_DOUBLE_EQ(loss_value(x_hat, x, Tensor::row({0.0, 0.0}), Tensor::row({0.0, 0.0}), 1e-6), 2.0);
}

TEST(DtiLoss, KlIsNonNegativeAndZeroOnlyAtPrior) {
  Rng rng(7);
  std::normal_distribution<double> n(0.0, 2.0);
  const Tensor x = Tensor::row({0.5});
  for (int i = 0; i < 500; ++i) {
    const Tensor mu = Tensor::row({n(rng), n(rng)});
    const Tensor lv = Tensor::row({n(rng), n(rng)});
    Graph g;
    const double kl = dti_loss(g.constant(x), g.constant(x), g.constant(mu), g.constant(lv), 1.0, 1.0).kl.value().item();
    EXPECT_GT(kl, 0.0);
  }
  Graph g;
  const Tensor zero = Tensor::row({0.0, 0.0});
  EXPECT_EQ(dti_loss(g.constant(x), g.constant(x), g.constant(zero), g.constant(zero), 1.0, 1.0).kl.value().item(),
            0.0);
}

TEST(DtiLoss, AveragesOverBatchRows) {
  Tensor x = Tensor::matrix(2, 2);
  Tensor x_hat = Tensor::matrix(2, 2);
  x_hat.at(0, 0) = 3.0;
  x_hat.at(0, 1) = 4.0;
  const Tensor zero = Tensor::matrix(2, 1);
  EXPECT_DOUBLE_EQ(loss_value(x_hat, x, zero, zero, 1.0), 2.5);
}

class DtiGradient : public ::testing::TestWithParam<int> {};

TEST_P(DtiGradient, SingleWindowBatchMatchesFiniteDifferences) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 500);
  DtiConfig cfg = small_config();
  cfg.beta_kl = 0.3;
  DtiModel model("dti", cfg);
  model.initialize(rng);
  const Window w = random_window(cfg.window, rng);
  const Window* batch[] = {&w};
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor noise = Tensor::matrix(1, cfg.latent);
  for (double& v : noise.data()) v = n01(rng);
  auto loss = [&](Graph& g) { return model.loss(g, batch, noise).total; };
  const auto r = test_support::gradient_check(model.parameters(), loss);
  EXPECT_LT(r.max_relative_error, 1e-4) << "checked " << r.checked;
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, DtiGradient, ::testing::Range(0, 10));

TEST(DtiModel, MeanModeIsDeterministicAndMatchesGraphEncoder) {
  Rng rng(1);
  DtiModel model("dti", small_config());
  model.initialize(rng);
  const Window w = random_window(6, rng);
  const LatentTrait a = model.infer(w, LatentMode::Mean, rng);
  const LatentTrait b = model.infer(w, LatentMode::Mean, rng);
  EXPECT_EQ(a.z, b.z);
  EXPECT_EQ(a.z, a.mu);

  Graph g;
  const Window* batch[] = {&w};
  const auto f = model.forward(g, batch, Tensor::matrix(1, 2));
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(f.mu.value()[i], a.mu[i], 1e-12);
    EXPECT_NEAR(std::exp(0.5 * f.log_var.value()[i]), a.sigma[i], 1e-12);
    EXPECT_NEAR(f.z.value()[i], a.mu[i], 1e-12);
  }
}

TEST(DtiModel, SampleModeMeanConvergesToMu) {
  Rng rng(2);
  DtiModel model("dti", small_config());
  model.initialize(rng);
  const Window w = random_window(6, rng);
  std::vector<double> mean(2, 0.0);
  const int draws = 10000;
  LatentTrait last;
  for (int i = 0; i < draws; ++i) {
    last = model.infer(w, LatentMode::Sample, rng);
    for (std::size_t d = 0; d < 2; ++d) mean[d] += last.z[d] / draws;
  }
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_GT(last.sigma[d], 0.0);
    EXPECT_LT(std::abs(mean[d] - last.mu[d]), 3.0 * last.sigma[d] / 100.0);
  }
}

TEST(DtiModel, ZeroEncoderYieldsHeadBias) {
  Rng rng(3);
  DtiModel model("dti", small_config());
  model.initialize(rng);
  for (nn::Parameter* p : model.encoder().parameters()) p->value.fill(0.0);
  model.mu_head().weight().value.fill(0.0);
  const Window w = random_window(6, rng);
  const LatentTrait z = model.infer(w, LatentMode::Mean, rng);
  for (std::size_t d = 0; d < 2; ++d) EXPECT_EQ(z.mu[d], model.mu_head().bias().value[d]);
}

TEST(DtiModel, WrongWindowLengthIsDimensionError) {
  Rng rng(4);
  DtiModel model("dti", small_config());
  model.initialize(rng);
  const Window w = random_window(5, rng);
  EXPECT_THROW(model.infer(w, LatentMode::Mean, rng), DimensionError);
  Graph g;
  const Window* batch[] = {&w};
  EXPECT_THROW(model.forward(g, batch, Tensor::matrix(1, 2)), DimensionError);
}

TEST(DtiModel, NegativeBetaIsConfigError) {
  DtiConfig cfg;
  cfg.beta_kl = -1.0;
  EXPECT_THROW(DtiModel("dti", cfg), ConfigError);
}

TEST(TrainDti, MemorisesSingleWindow) {
  DtiConfig cfg;
  cfg.epochs = 200;
  cfg.batch = 1;
  sim::RingConfig ring;
  ring.horizon = 100;
  ring.warmup_steps = 300;
  trainer::RolloutSpec rs;
  rs.kind = advisory::PolicyKind::Osl;
  rs.capture_observations = true;
  const trainer::Episode ep = trainer::rollout(rs, ring, 0);
  DtiModel model("dti", cfg);
  Rng rng(5);
  model.initialize(rng);
  const auto data = labeled({window_from(ep.observations, cfg.window)});
  const double initial = evaluate_loss(model, data, 0);
  const auto history = train_dti(model, data, {}, cfg);
  EXPECT_LT(history.back().train_loss, 0.1 * initial);
}

TEST(TrainDti, ZeroLearningRateLeavesParametersUnchanged) {
  DtiConfig cfg = small_config();
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  DtiModel model("dti", cfg);
  Rng rng(6);
  model.initialize(rng);
  std::vector<Tensor> before;
  for (const nn::Parameter* p : std::as_const(model).parameters()) before.push_back(p->value);
  const auto data = labeled({random_window(6, rng), random_window(6, rng), random_window(6, rng)});
  train_dti(model, data, data, cfg);
  const auto after = std::as_const(model).parameters();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i] == after[i]->value);
}

TEST(TrainDti, FixedSeedReproducesLossCurve) {
  DtiConfig cfg = small_config();
  cfg.epochs = 5;
  cfg.batch = 4;
  Rng data_rng(8);
  std::vector<Window> xs;
  for (int i = 0; i < 20; ++i) xs.push_back(random_window(6, data_rng));
  const auto data = labeled(xs);
  auto run = [&] {
    DtiModel model("dti", cfg);
    Rng rng(9);
    model.initialize(rng);
    return train_dti(model, data, data, cfg);
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].train_loss, b[i].train_loss, 1e-9);
    EXPECT_NEAR(a[i].test_loss, b[i].test_loss, 1e-9);
  }
}

TEST(TrainDti, HeldOutLossImproves) {
  DtiConfig cfg;
  cfg.window = 20;
  cfg.hidden = 16;
  cfg.epochs = 15;
  std::vector<Window> train_x, test_x;
  for (int i = 0; i < 48; ++i) train_x.push_back(smooth_window(20, 0.13 * i));
  for (int i = 0; i < 12; ++i) test_x.push_back(smooth_window(20, 0.13 * i + 0.05));
  DtiModel model("dti", cfg);
  Rng rng(10);
  model.initialize(rng);
  const auto history = train_dti(model, labeled(train_x), labeled(test_x), cfg);
  EXPECT_LT(history.back().test_loss, history.front().test_loss);
}

TEST(TrainDti, NonFiniteLossAborts) {
  DtiConfig cfg = small_config();
  cfg.epochs = 1;
  DtiModel model("dti", cfg);
  Rng rng(11);
  model.initialize(rng);
  model.mu_head().bias().value[0] = std::numeric_limits<double>::quiet_NaN();
  const auto data = labeled({random_window(6, rng)});
  EXPECT_THROW(train_dti(model, data, {}, cfg), NumericError);
}

TEST(TrainDti, EmptyTrainingSetIsRejected) {
  DtiModel model("dti", small_config());
  EXPECT_THROW(train_dti(model, {}, {}, small_config()), ContractError);
}

namespace {

DatasetSpec small_dataset_spec(const advisory::PolicyModel& pcp, TraitAxis axis, std::size_t size) {
  DatasetSpec spec;
  spec.axis = axis;
  spec.size = size;
  spec.seed = 3;
  spec.base_policies[50] = &pcp;
  spec.ring.horizon = 600;
  spec.ring.warmup_steps = 300;
  return spec;
}

advisory::PolicyModel random_pcp() {
  advisory::PolicyModel pcp(advisory::PolicyKind::Pcp, 50, advisory::ActionGrid::make());
  Rng rng(12);
  pcp.initialize(rng);
  return pcp;
}

}  // namespace

TEST(GenDataset, StratifiesOffsetClassesExactly) {
  const auto pcp = random_pcp();
  const Dataset data = gen_dataset(small_dataset_spec(pcp, TraitAxis::Offset, 700));
  ASSERT_EQ(data.size(), 700u);
  std::map<double, int> counts;
  for (const auto* part : {&data.train, &data.test}) {
    for (const LabeledWindow& w : *part) {
      ++counts[w.traits.intentional_offset];
      EXPECT_EQ(w.x.size(), 50 * kFeatures);
    }
  }
  ASSERT_EQ(counts.size(), 7u);
  for (const auto& [offset, n] : counts) EXPECT_EQ(n, 100) << "offset " << offset;
  EXPECT_NEAR(static_cast<double>(data.test.size()) / 700.0, 0.2, 0.05);
}

TEST(GenDataset, SplitsByEpisode) {
  const auto pcp = random_pcp();
  const Dataset data = gen_dataset(small_dataset_spec(pcp, TraitAxis::Delay, 500));
  std::set<std::uint64_t> train_eps, test_eps;
  for (const auto& w : data.train) train_eps.insert(w.episode);
  for (const auto& w : data.test) test_eps.insert(w.episode);
  for (std::uint64_t e : test_eps) EXPECT_EQ(train_eps.count(e), 0u);
  std::map<double, int> counts;
  for (const auto& w : data.train) ++counts[w.traits.reaction_delay];
  for (const auto& w : data.test) ++counts[w.traits.reaction_delay];
  for (const auto& [delay, n] : counts) EXPECT_EQ(n, 100) << "delay " << delay;
}

TEST(GenDataset, FixedSeedGivesIdenticalHashAndRoundTrips) {
  const auto pcp = random_pcp();
  const DatasetSpec spec = small_dataset_spec(pcp, TraitAxis::Offset, 140);
  const Dataset a = gen_dataset(spec);
  const Dataset b = gen_dataset(spec);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());

  std::stringstream buf;
  write_dataset(a, buf);
  const Dataset c = read_dataset(buf);
  EXPECT_EQ(c.fingerprint(), a.fingerprint());

  DatasetSpec other = spec;
  other.seed = 4;
  EXPECT_NE(gen_dataset(other).fingerprint(), a.fingerprint());
}

TEST(GenDataset, RequiresBasePolicy) {
  DatasetSpec spec;
  EXPECT_THROW(gen_dataset(spec), ConfigError);
}

TEST(Separation, WellSeparatedClustersScorePerfectly) {
  std::vector<LatentPoint> ref, query;
  Rng rng(13);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 30; ++i) {
      ref.push_back({{c * 5.0 + n(rng), n(rng)}, static_cast<double>(c), 50});
      query.push_back({{c * 5.0 + n(rng), n(rng)}, static_cast<double>(c), 50});
    }
  }
  const SeparationReport r = separation(ref, query, 5);
  EXPECT_EQ(r.classes, 3u);
  EXPECT_DOUBLE_EQ(r.chance, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.knn_accuracy, 1.0);
  ASSERT_TRUE(r.silhouette.has_value());
  EXPECT_GT(*r.silhouette, 0.9);
}

TEST(Separation, UnstructuredLabelsStayAtChance) {
  Rng rng(14);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, 6);
  std::vector<LatentPoint> ref, query;
  for (int i = 0; i < 4000; ++i) ref.push_back({{n(rng), n(rng)}, static_cast<double>(label(rng)), 50});
  for (int i = 0; i < 2000; ++i) query.push_back({{n(rng), n(rng)}, static_cast<double>(label(rng)), 50});
  const SeparationReport r = separation(ref, query, 5);
  EXPECT_NEAR(r.knn_accuracy, 1.0 / 7.0, 0.05);
}

TEST(Separation, SingleClassHasNoSilhouette) {
  std::vector<LatentPoint> pts{{{0.0, 0.0}, 1.0, 50}, {{1.0, 0.0}, 1.0, 50}, {{0.0, 1.0}, 1.0, 50}};
  const SeparationReport r = separation(pts, pts, 1);
  EXPECT_EQ(r.classes, 1u);
  EXPECT_FALSE(r.silhouette.has_value());
  EXPECT_DOUBLE_EQ(r.knn_accuracy, 1.0);
  EXPECT_THROW(silhouette_score(pts), ContractError);
}

TEST(Separation, TiesGoToNearestLabel) {
  std::vector<LatentPoint> ref{{{1.0}, 0.0, 0}, {{-1.1}, 1.0, 0}, {{2.0}, 0.0, 0}, {{-2.1}, 1.0, 0}};
  std::vector<LatentPoint> query{{{0.0}, 0.0, 0}};
  EXPECT_DOUBLE_EQ(separation(ref, query, 4).knn_accuracy, 1.0);
}

TEST(LatentScatter, WritesExpectedColumns) {
  std::vector<LatentPoint> pts{{{0.5, -0.25}, -7.5, 70}};
  std::ostringstream out;
  write_latent_scatter(pts, out);
  EXPECT_EQ(out.str(), "z1,z2,trait_label,delta\n0.5,-0.25,-7.5,70\n");
}

TEST(WindowFrom, PadsWithOldestObservation) {
  std::vector<advisory::Observation> obs{{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}};
  const Window w = window_from(obs, 4);
  EXPECT_EQ(w, (Window{0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
  EXPECT_EQ(window_from(obs, 1), (Window{0.4, 0.5, 0.6}));
  EXPECT_THROW(window_from({}, 3), DimensionError);
}

TEST(RollingTrace, OnePointPerStride) {
  Rng rng(15);
  DtiModel model("dti", small_config());
  model.initialize(rng);
  std::vector<advisory::Observation> obs(20, advisory::Observation{0.2, 0.2, 0.01});
  const auto trace = rolling_trace(model, obs, 5);
  ASSERT_EQ(trace.size(), 3u);
  EXPECT_EQ(trace.front().step, 6u);
  EXPECT_EQ(trace.back().step, 16u);
  EXPECT_EQ(trace.front().z, trace.back().z);
}

TEST(DtiLatentSource, ConcatenatesModelsInOrder) {
  Rng rng(16);
  DtiModel delay("delay", small_config());
  DtiModel offset("offset", small_config());
  delay.initialize(rng);
  offset.initialize(rng);
  DtiLatent source({&delay, &offset}, LatentMode::Mean);
  EXPECT_EQ(source.dim(), 4u);
  EXPECT_EQ(source.history_length(), 6u);

  std::deque<advisory::Observation> history;
  for (int i = 0; i < 6; ++i) history.push_back({0.1 * i, 0.05 * i, 0.01});
  const std::vector<double> z = source.latent(history, rng);
  const std::vector<advisory::Observation> flat(history.begin(), history.end());
  const Window w = window_from(flat, 6);
  const auto zd = delay.infer(w, LatentMode::Mean, rng).z;
  const auto zo = offset.infer(w, LatentMode::Mean, rng).z;
  EXPECT_EQ(z, (std::vector<double>{zd[0], zd[1], zo[0], zo[1]}));
}
