#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "ringlab/error.hpp"
#include "ringlab/harness/archive.hpp"
#include "ringlab/harness/config.hpp"
#include "ringlab/harness/experiment.hpp"

using namespace ringlab;
using namespace ringlab::harness;
using advisory::PolicyKind;

namespace {

sim::RingConfig toy_ring() {
  sim::RingConfig ring;
  ring.vehicle_count = 8;
  ring.circumference = 126.0;
  ring.warmup_steps = 100;
  ring.horizon = 200;
  return ring;
}

advisory::PolicyModel seeded(PolicyKind kind, int hold, std::size_t latent = 0, std::uint64_t seed = 1) {
  advisory::PolicyModel p(kind, hold, advisory::ActionGrid::make(), latent);
  Rng rng(seed);
  p.initialize(rng);
  return p;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ringlab_" + name);
}

}  // namespace

TEST(RunConfig, DefaultsRoundTripThroughIni) {
  RunConfig cfg;
  cfg.seeds = {3, 4};
  cfg.ring.horizon = 1234;
  cfg.train.estimator = trainer::TrainConfig::Estimator::Clipped;
  cfg.driver.mode = trainer::DriverSpec::Mode::Fixed;
  cfg.driver.offset = -2.5;
  cfg.dti.axis = dti::TraitAxis::Delay;
  cfg.sweep.deltas = {70};
  std::stringstream buf;
  write_run_config(cfg, buf);
  const RunConfig back = parse_run_config(buf);
  EXPECT_EQ(back.seeds, cfg.seeds);
  EXPECT_EQ(back.ring.horizon, 1234);
  EXPECT_EQ(back.train.estimator, trainer::TrainConfig::Estimator::Clipped);
  EXPECT_EQ(back.driver.mode, trainer::DriverSpec::Mode::Fixed);
  EXPECT_EQ(back.driver.offset, -2.5);
  EXPECT_EQ(back.dti.axis, dti::TraitAxis::Delay);
  EXPECT_EQ(back.sweep.deltas, std::vector<int>{70});
  EXPECT_EQ(back.hash(), cfg.hash());
}

TEST(RunConfig, PartialFileKeepsDefaults) {
  std::istringstream in("[run]\nseed = 9\npolicy = rp\n\n[ring]\nvehicle_count = 8\ncircumference = 126\n");
  const RunConfig cfg = parse_run_config(in);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.policy, PolicyKind::Rp);
  EXPECT_EQ(cfg.ring.vehicle_count, 8);
  EXPECT_EQ(cfg.ring.horizon, 3000);
  EXPECT_EQ(cfg.train.learning_rate, 1e-4);
}

TEST(RunConfig, RejectsUnknownKeysBadValuesAndVersions) {
  std::istringstream unknown("[ring]\nlanes = 2\n");
  EXPECT_THROW(parse_run_config(unknown), ConfigError);
  std::istringstream bad("[ring]\nhorizon = soon\n");
  EXPECT_THROW(parse_run_config(bad), ConfigError);
  std::istringstream version("[run]\nformat_version = 2\n");
  EXPECT_THROW(parse_run_config(version), ConfigError);
  std::istringstream invalid("[ring]\ncircumference = 100\n");
  EXPECT_THROW(parse_run_config(invalid), ConfigError);
}

TEST(RunConfig, HashChangesWithAnyField) {
  RunConfig a, b;
  b.reward.action = 0.25;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Archive, SaveLoadIsByteExact) {
  const auto pcp = seeded(PolicyKind::Pcp, 70);
  const ModelArchive a = archive_policy(pcp, 42);
  const auto path = temp_path("pcp.rlm");
  save_archive(a, path);
  const ModelArchive b = load_archive(path);
  EXPECT_EQ(b.header, a.header);
  ASSERT_EQ(b.tensors.size(), a.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(b.tensors[i], a.tensors[i]);
  EXPECT_EQ(encode_archive(b), encode_archive(a));
  std::filesystem::remove(path);
}

TEST(Archive, EveryFlippedBitIsRejected) {
  const auto bytes = encode_archive(archive_policy(seeded(PolicyKind::Rp, 50), 0));
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> pos(0, bytes.size() * 8 - 1);
  for (int trial = 0; trial < 200; ++trial) {
    auto corrupt = bytes;
    const std::size_t bit = pos(rng);
    corrupt[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    EXPECT_THROW(decode_archive(corrupt), ArchiveError) << "bit " << bit;
  }
}

TEST(Archive, TruncationIsRejected) {
  auto bytes = encode_archive(archive_policy(seeded(PolicyKind::Pcp, 50), 0));
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(decode_archive(bytes), ArchiveError);
}

TEST(Archive, KindMismatchIsRejected) {
  const ModelArchive a = archive_policy(seeded(PolicyKind::Pcp, 50), 0);
  EXPECT_THROW(restore_policy(a, PolicyKind::Rp), ArchiveError);
  EXPECT_THROW(restore_dti(a), ArchiveError);
  EXPECT_NO_THROW(restore_policy(a, PolicyKind::Pcp));
}

TEST(Archive, LayoutVersionMismatchIsRefused) {
  ModelArchive a = archive_policy(seeded(PolicyKind::Perp, 50, 4), 0);
  a.header.input_layout_version = advisory::kInputLayoutVersion + 1;
  const ModelArchive back = decode_archive(encode_archive(a));
  try {
    restore_policy(back, PolicyKind::Perp);
    FAIL() << "expected ArchiveError";
  } catch (const ArchiveError& e) {
    EXPECT_NE(std::string(e.what()).find("layout version"), std::string::npos);
  }
}

TEST(Archive, RestoredPolicyReproducesActions) {
  const auto base = seeded(PolicyKind::Pcp, 50, 0, 5);
  const auto rp = seeded(PolicyKind::Rp, 50, 0, 6);
  const auto base2 = restore_policy(decode_archive(encode_archive(archive_policy(base, 0))), PolicyKind::Pcp);
  const auto rp2 = restore_policy(decode_archive(encode_archive(archive_policy(rp, 0))), PolicyKind::Rp);
  EXPECT_EQ(rp2.latent_dim(), rp.latent_dim());
  EXPECT_EQ(rp2.grid().residual, rp.grid().residual);

  const PolicySetup a{PolicyKind::Rp, 50, &base, &rp, {}};
  const PolicySetup b{PolicyKind::Rp, 50, &base2, &rp2, {}};
  auto ra = rollout_spec(a, trainer::DriverSpec::sampled(), false);
  auto rb = rollout_spec(b, trainer::DriverSpec::sampled(), false);
  ra.record = rb.record = true;
  const auto ea = trainer::rollout(ra, toy_ring(), 11);
  const auto eb = trainer::rollout(rb, toy_ring(), 11);
  EXPECT_EQ(ea.advice, eb.advice);
  EXPECT_TRUE(sim::identical(ea.record, eb.record));
}

TEST(Archive, DtiRoundTrip) {
  dti::DtiConfig cfg;
  cfg.window = 8;
  cfg.hidden = 6;
  dti::DtiModel m("offset", cfg);
  Rng rng(7);
  m.initialize(rng);
  const ModelArchive a = archive_dti(m, dti::TraitAxis::Offset, 1);
  const dti::DtiModel back = restore_dti(decode_archive(encode_archive(a)));
  EXPECT_EQ(back.config().window, 8u);
  EXPECT_EQ(back.name(), "offset");
  std::vector<double> w(8 * dti::kFeatures, 0.3);
  EXPECT_EQ(back.infer(w, dti::LatentMode::Mean, rng).z, m.infer(w, dti::LatentMode::Mean, rng).z);
  EXPECT_THROW(restore_policy(a, PolicyKind::Pcp), ArchiveError);
}

TEST(Evaluate, ReportsExactlyOneEpisodePerSeed) {
  const auto pcp = seeded(PolicyKind::Pcp, 50);
  const auto spec = rollout_spec({PolicyKind::Pcp, 50, &pcp, nullptr, {}}, trainer::DriverSpec::sampled(), true);
  const auto seeds = eval_seeds(0, 100);
  const EvalResult r = evaluate(spec, toy_ring(), seeds, 2);
  EXPECT_EQ(r.episodes.size(), 100u);
  EXPECT_EQ(r.summary.episodes, 100u);
  EXPECT_EQ(r.summary.policy, "pcp");
  for (const auto& e : r.episodes) EXPECT_EQ(e.steps, 200u);
}

TEST(Evaluate, WorkerCountDoesNotChangeResults) {
  const auto pcp = seeded(PolicyKind::Pcp, 50);
  const auto spec = rollout_spec({PolicyKind::Pcp, 50, &pcp, nullptr, {}}, trainer::DriverSpec::sampled(), false);
  const auto seeds = eval_seeds(4, 6);
  const EvalResult a = evaluate(spec, toy_ring(), seeds, 1);
  const EvalResult b = evaluate(spec, toy_ring(), seeds, 3);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    EXPECT_EQ(a.episodes[i].cf, b.episodes[i].cf);
    EXPECT_EQ(a.episodes[i].traits, b.episodes[i].traits);
  }
}

TEST(Evaluate, PinnedTraitIsLabelled) {
  const auto pcp = seeded(PolicyKind::Pcp, 50);
  const auto spec = rollout_spec({PolicyKind::Pcp, 50, &pcp, nullptr, {}}, trainer::DriverSpec::sampled(), true);
  const auto seeds = eval_seeds(1, 3);
  const EvalResult r = evaluate(spec, toy_ring(), seeds, 1, TraitPin{dti::TraitAxis::Offset, -2.5});
  EXPECT_EQ(r.summary.traits, "offset=-2.5");
}

TEST(Sweep, SevenOffsetsThreeDeltasFourKindsGive84Rows) {
  dti::DtiConfig dcfg;
  dcfg.window = 10;
  dcfg.hidden = 4;
  dti::DtiModel delay("delay", dcfg), offset("offset", dcfg);
  Rng rng(8);
  delay.initialize(rng);
  offset.initialize(rng);

  std::vector<advisory::PolicyModel> models;
  models.reserve(12);
  std::vector<PolicySetup> setups;
  for (int delta : {50, 70, 100}) {
    models.push_back(seeded(PolicyKind::Pcp, delta));
    const advisory::PolicyModel* base = &models.back();
    models.push_back(seeded(PolicyKind::Rp, delta));
    const advisory::PolicyModel* rp = &models.back();
    models.push_back(seeded(PolicyKind::Perp, delta, 4));
    const advisory::PolicyModel* perp = &models.back();
    models.push_back(seeded(PolicyKind::Tarp, delta, advisory::kTraitEncodingWidth));
    const advisory::PolicyModel* tarp = &models.back();
    setups.push_back({PolicyKind::Pcp, delta, base, nullptr, {}});
    setups.push_back({PolicyKind::Rp, delta, base, rp, {}});
    setups.push_back({PolicyKind::Perp, delta, base, perp, dti_latents({&delay, &offset}, dti::LatentMode::Mean)});
    setups.push_back({PolicyKind::Tarp, delta, base, tarp, trainer::trait_latents()});
  }
  const auto seeds = eval_seeds(0, 1);
  const std::vector<double> offsets(driver::kOffsetChoices.begin(), driver::kOffsetChoices.end());
  const auto rows = sweep(setups, offsets, true, toy_ring(), seeds);
  ASSERT_EQ(rows.size(), 84u);
  EXPECT_EQ(rows.front().policy, "pcp");
  EXPECT_EQ(rows.front().traits, "offset=-7.5");
  EXPECT_EQ(rows.back().policy, "tarp");
  EXPECT_EQ(rows.back().hold_steps, 100);
  EXPECT_EQ(rows.back().traits, "offset=7.5");
}

TEST(SelectBest, HighestMeanCfWithLowestSeedOnTies) {
  std::vector<Candidate> c(4);
  for (std::size_t i = 0; i < c.size(); ++i) c[i].seed = 10 - i;
  c[0].summary.cf.mean = 7.0;
  c[1].summary.cf.mean = 8.0;
  c[2].summary.cf.mean = 6.0;
  c[3].summary.cf.mean = 8.0;
  EXPECT_EQ(select_best(c), 3u);
  EXPECT_THROW(select_best({}), ContractError);
}
