#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ringlab/drive/server.hpp"
#include "ringlab/error.hpp"
#include "ringlab/harness/archive.hpp"
#include "ringlab/harness/config.hpp"
#include "ringlab/harness/experiment.hpp"
#include "ringlab/harness/library.hpp"

namespace ringlab::cli {

namespace {

namespace fs = std::filesystem;
using advisory::PolicyKind;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> policy;
  std::optional<int> delta;
  std::optional<double> amax;
  std::optional<bool> greedy;
  std::optional<int> workers;
  std::vector<std::string> base_archives;
  std::string archive;
  std::string archive_dir;
  std::string dataset;
  std::string dti_archive;
  std::size_t trace_stride = 10;
  std::string address = "127.0.0.1";
  unsigned short port = 8080;
  std::string static_dir;
  std::string record_dir;
  double trial_seconds = 300.0;
  bool lockstep = false;
  std::string log_level = "info";
};

harness::RunConfig load_config(const Options& o) {
  harness::RunConfig cfg = o.config.empty() ? harness::RunConfig{} : harness::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.policy) cfg.policy = advisory::parse_policy_kind(*o.policy);
  if (o.delta) cfg.delta = *o.delta;
  if (o.amax) cfg.amax = *o.amax;
  if (o.greedy) cfg.greedy = *o.greedy;
  if (o.workers) cfg.workers = *o.workers;
  cfg.validate();
  return cfg;
}

fs::path output_dir(const harness::RunConfig& cfg) {
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  body(f);
  if (!f) throw ConfigError("failed writing '" + path.string() + "'");
}

std::string tag(PolicyKind kind, int delta) { return std::string(advisory::to_string(kind)) + "_d" + std::to_string(delta); }

std::vector<std::uint64_t> training_seeds(const harness::RunConfig& cfg, const Options& o) {
  if (o.seed) return {*o.seed};
  return cfg.seeds;
}

trainer::ProgressFn progress(std::string label, int iterations) {
  return [label = std::move(label), iterations](const trainer::CurvePoint& p) {
    if (p.iteration % 10 == 0 || p.iteration + 1 == iterations) {
      spdlog::info("{} iteration {}: return {:.2f} cf {:.3f} collisions {:.2f}", label, p.iteration, p.mean_return,
                   p.mean_cf, p.collision_rate);
    }
  };
}

fs::path require_file(const std::string& path, const char* what, const char* flag) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what + "; pass " + flag);
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
  return path;
}

// The hold length an archive was trained with, checked against --delta.
int archive_delta(const fs::path& path, const Options& o) {
  const harness::ModelArchive a = harness::load_archive(path);
  if (o.delta && *o.delta != a.header.hold_steps) {
    throw ConfigError("archive '" + path.string() + "' holds delta " + std::to_string(a.header.hold_steps) +
                      " but --delta is " + std::to_string(*o.delta));
  }
  return a.header.hold_steps;
}

void write_episodes_csv(std::span<const std::uint64_t> seeds, std::span<const metrics::EpisodeMetrics> episodes,
                        std::ostream& out) {
  out << "seed,mu,sigma,cf,collision,steps,traits\n";
  out.precision(17);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& e = episodes[i];
    out << seeds[i] << ',' << e.mu << ',' << e.sigma << ',' << e.cf << ',' << (e.collision ? 1 : 0) << ','
        << e.steps << ",\"" << e.traits << "\"\n";
  }
}

void print_row(const metrics::SummaryRow& r, std::ostream& out) {
  out << r.policy << " delta=" << r.hold_steps << (r.traits.empty() ? "" : " " + r.traits) << ": mu "
      << r.mu.mean << " +- " << r.mu.std << ", sigma " << r.sigma.mean << " +- " << r.sigma.std << ", cf "
      << r.cf.mean << " +- " << r.cf.std << " over " << r.episodes << " episodes (" << r.collisions
      << " collisions)\n";
}

// Best-of-n: copies the winning archive to <kind>_d<delta>.rlm and writes the
// candidate table.
void finish_selection(const fs::path& dir, PolicyKind kind, int delta, std::vector<harness::Candidate> candidates,
                      const std::vector<fs::path>& archives, std::ostream& out) {
  const std::size_t best = harness::select_best(candidates);
  const fs::path target = harness::PolicyLibrary::policy_file(dir, kind, delta);
  if (fs::absolute(archives[best]) != fs::absolute(target)) {
    fs::copy_file(archives[best], target, fs::copy_options::overwrite_existing);
  }
  write_file(dir / ("selection_" + tag(kind, delta) + ".csv"), [&](std::ostream& f) {
    f << "seed,mu,sigma,cf,cf_std,collisions,selected\n";
    f.precision(17);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& s = candidates[i].summary;
      f << candidates[i].seed << ',' << s.mu.mean << ',' << s.sigma.mean << ',' << s.cf.mean << ',' << s.cf.std
        << ',' << s.collisions << ',' << (i == best ? 1 : 0) << '\n';
    }
  });
  metrics::SummaryRow row = candidates[best].summary;
  row.selected_seed = candidates[best].seed;
  write_file(dir / ("summary_" + tag(kind, delta) + ".json"),
             [&](std::ostream& f) { metrics::write_summary_json(std::span(&row, 1), f); });
  out << "selected seed " << candidates[best].seed << " of " << candidates.size() << " -> " << target.string()
      << '\n';
  print_row(row, out);
}

int train_pcp(harness::RunConfig cfg, const Options& o, std::ostream& out) {
  if (o.policy && cfg.policy != PolicyKind::Pcp) throw ConfigError("train-pcp only trains --policy pcp");
  const fs::path dir = output_dir(cfg);
  const auto eval = harness::eval_seeds(cfg.seed, cfg.eval_episodes);
  std::vector<harness::Candidate> candidates;
  std::vector<fs::path> archives;
  for (std::uint64_t seed : training_seeds(cfg, o)) {
    advisory::PolicyModel model(PolicyKind::Pcp, cfg.delta, cfg.grid());
    Rng init = SeedStreams(seed).stream("policy.init");
    model.initialize(init);
    trainer::TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.workers = cfg.workers;
    const harness::PolicySetup setup{PolicyKind::Pcp, cfg.delta, &model, nullptr, {}};
    trainer::RolloutSpec spec = harness::rollout_spec(setup, trainer::DriverSpec::perfect(), false);
    spec.reward_params = cfg.reward;
    const std::string name = tag(PolicyKind::Pcp, cfg.delta) + "_s" + std::to_string(seed);
    const trainer::TrainResult result = trainer::train(model, spec, cfg.ring, tc, progress(name, tc.iterations));
    write_file(dir / ("curve_" + name + ".csv"), [&](std::ostream& f) { trainer::write_learning_curve(result.curve, f); });
    archives.push_back(dir / (name + ".rlm"));
    harness::save_archive(harness::archive_policy(model, cfg.hash()), archives.back());

    const auto es = harness::rollout_spec(setup, trainer::DriverSpec::perfect(), cfg.greedy);
    candidates.push_back({seed, harness::evaluate(es, cfg.ring, eval, cfg.workers).summary});
    spdlog::info("{}: eval cf {:.4f}", name, candidates.back().summary.cf.mean);
  }
  finish_selection(dir, PolicyKind::Pcp, cfg.delta, std::move(candidates), archives, out);
  return 0;
}

// Adds the DTI models PeRP needs, from the config paths or the library dir.
void add_dti_archives(harness::PolicyLibrary& lib, const harness::RunConfig& cfg) {
  if (!cfg.dti.delay_archive.empty()) lib.add_dti(dti::TraitAxis::Delay, cfg.dti.delay_archive);
  if (!cfg.dti.offset_archive.empty()) lib.add_dti(dti::TraitAxis::Offset, cfg.dti.offset_archive);
}

fs::path library_dir(const harness::RunConfig& cfg, const Options& o) {
  return o.archive_dir.empty() ? fs::path(cfg.sweep.archive_dir) : fs::path(o.archive_dir);
}

int train_residual(harness::RunConfig cfg, const Options& o, std::ostream& out) {
  if (!advisory::is_residual(cfg.policy)) throw ConfigError("train-residual needs --policy rp, perp or tarp");
  if (o.base_archives.size() > 1) throw ConfigError("train-residual takes exactly one --base-archive");
  const fs::path base_path = require_file(o.base_archives.empty() ? "" : o.base_archives.front(), "base archive", "--base-archive");
  cfg.delta = archive_delta(base_path, o);

  harness::PolicyLibrary lib(library_dir(cfg, o));
  add_dti_archives(lib, cfg);
  lib.add_policy(PolicyKind::Pcp, cfg.delta, base_path);
  const advisory::PolicyModel& base = lib.policy(PolicyKind::Pcp, cfg.delta);

  trainer::LatentFactory latent;
  std::size_t latent_dim = 0;
  if (cfg.policy == PolicyKind::Tarp) {
    latent = trainer::trait_latents();
    latent_dim = advisory::kTraitEncodingWidth;
  } else if (cfg.policy == PolicyKind::Perp) {
    const dti::DtiModel& delay = lib.dti(dti::TraitAxis::Delay);
    const dti::DtiModel& offset = lib.dti(dti::TraitAxis::Offset);
    latent = harness::dti_latents({&delay, &offset}, dti::LatentMode::Mean);
    latent_dim = delay.config().latent + offset.config().latent;
  }

  const fs::path dir = output_dir(cfg);
  const auto eval = harness::eval_seeds(cfg.seed, cfg.eval_episodes);
  std::vector<harness::Candidate> candidates;
  std::vector<fs::path> archives;
  for (std::uint64_t seed : training_seeds(cfg, o)) {
    advisory::PolicyModel model(cfg.policy, cfg.delta, base.grid(), latent_dim);
    Rng init = SeedStreams(seed).stream("policy.init");
    model.initialize(init);
    trainer::TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.workers = cfg.workers;
    const harness::PolicySetup setup{cfg.policy, cfg.delta, &base, &model, latent};
    trainer::RolloutSpec spec = harness::rollout_spec(setup, cfg.driver.spec(), false);
    spec.reward_params = cfg.reward;
    const std::string name = tag(cfg.policy, cfg.delta) + "_s" + std::to_string(seed);
    const trainer::TrainResult result = trainer::train(model, spec, cfg.ring, tc, progress(name, tc.iterations));
    write_file(dir / ("curve_" + name + ".csv"), [&](std::ostream& f) { trainer::write_learning_curve(result.curve, f); });
    archives.push_back(dir / (name + ".rlm"));
    harness::save_archive(harness::archive_policy(model, cfg.hash()), archives.back());

    trainer::RolloutSpec es = harness::rollout_spec(setup, cfg.driver.spec(), cfg.greedy);
    es.reward_params = cfg.reward;
    candidates.push_back({seed, harness::evaluate(es, cfg.ring, eval, cfg.workers).summary});
    spdlog::info("{}: eval cf {:.4f}", name, candidates.back().summary.cf.mean);
  }
  finish_selection(dir, cfg.policy, cfg.delta, std::move(candidates), archives, out);
  return 0;
}

dti::Dataset make_dataset(const harness::RunConfig& cfg, const Options& o) {
  if (o.base_archives.empty()) throw ConfigError("generating a DTI dataset needs at least one --base-archive");
  std::vector<advisory::PolicyModel> bases;
  bases.reserve(o.base_archives.size());
  dti::DatasetSpec spec;
  for (const std::string& path : o.base_archives) {
    bases.push_back(harness::restore_policy(harness::load_archive(require_file(path, "base archive", "--base-archive")), PolicyKind::Pcp));
  }
  for (const auto& b : bases) {
    if (!spec.base_policies.emplace(b.hold_steps(), &b).second) {
      throw ConfigError("two base archives share delta " + std::to_string(b.hold_steps()));
    }
  }
  spec.axis = cfg.dti.axis;
  spec.size = cfg.dti.dataset_size;
  spec.window = cfg.dti.model.window;
  spec.windows_per_episode = cfg.dti.windows_per_episode;
  spec.test_fraction = cfg.dti.test_fraction;
  spec.seed = cfg.seed;
  spec.ring = cfg.ring;
  return dti::gen_dataset(spec);
}

dti::Dataset read_dataset_file(const fs::path& path) {
  std::ifstream in(require_file(path.string(), "dataset", "--dataset"));
  return dti::read_dataset(in);
}

int gen_dataset(const harness::RunConfig& cfg, const Options& o, std::ostream& out) {
  const dti::Dataset data = make_dataset(cfg, o);
  const fs::path path = output_dir(cfg) / ("dti_" + std::string(dti::to_string(data.axis)) + "_dataset.csv");
  write_file(path, [&](std::ostream& f) { dti::write_dataset(data, f); });
  out << "wrote " << data.train.size() << " train and " << data.test.size() << " test windows to "
      << path.string() << " (fingerprint " << std::hex << data.fingerprint() << std::dec << ")\n";
  return 0;
}

void write_report(const char* name, const dti::SeparationReport& r, std::ostream& f) {
  f << "  \"" << name << "\": {\"evaluated\": " << r.evaluated << ", \"classes\": " << r.classes
    << ", \"chance\": " << r.chance << ", \"knn_accuracy\": " << r.knn_accuracy << ", \"silhouette\": ";
  if (r.silhouette) {
    f << *r.silhouette;
  } else {
    f << "null";
  }
  f << '}';
}

int train_dti(const harness::RunConfig& cfg, const Options& o, std::ostream& out) {
  const std::string dataset_path = o.dataset.empty() ? cfg.dti.dataset : o.dataset;
  const dti::Dataset data = dataset_path.empty() ? make_dataset(cfg, o) : read_dataset_file(dataset_path);
  if (data.train.empty()) throw ConfigError("the DTI dataset has no training windows");
  dti::DtiConfig mc = cfg.dti.model;
  mc.window = data.window;
  mc.seed = cfg.seed;
  const std::string axis(dti::to_string(data.axis));
  dti::DtiModel model(axis, mc);
  Rng init = SeedStreams(cfg.seed).stream("dti.init");
  model.initialize(init);

  const dti::SeparationReport before = dti::latent_separation_report(model, data);
  const auto losses = dti::train_dti(model, data.train, data.test, mc, [&](const dti::EpochLoss& e) {
    spdlog::info("dti {} epoch {}: train {:.6f} test {:.6f}", axis, e.epoch, e.train_loss, e.test_loss);
  });
  const dti::SeparationReport after = dti::latent_separation_report(model, data);

  const fs::path dir = output_dir(cfg);
  const fs::path archive = harness::PolicyLibrary::dti_file(dir, data.axis);
  harness::save_archive(harness::archive_dti(model, data.axis, cfg.hash()), archive);
  write_file(dir / ("dti_" + axis + "_loss.csv"), [&](std::ostream& f) {
    f << "epoch,train_loss,test_loss\n";
    f.precision(17);
    for (const auto& e : losses) f << e.epoch << ',' << e.train_loss << ',' << e.test_loss << '\n';
  });
  write_file(dir / ("dti_" + axis + "_latent.csv"), [&](std::ostream& f) {
    dti::write_latent_scatter(dti::embed(model, data.test, data.axis, false), f);
  });
  write_file(dir / ("dti_" + axis + "_separation.json"), [&](std::ostream& f) {
    f << "{\n";
    write_report("untrained", before, f);
    f << ",\n";
    write_report("trained", after, f);
    f << "\n}\n";
  });
  out << "DTI " << axis << ": k-NN accuracy " << after.knn_accuracy << " (untrained " << before.knn_accuracy
      << ", chance " << after.chance << ") -> " << archive.string() << '\n';
  return 0;
}

// The library for eval and plot-export, with --archive and --base-archive
// taking precedence over the archive directory.
harness::PolicyLibrary policy_library(harness::RunConfig& cfg, const Options& o) {
  harness::PolicyLibrary lib(library_dir(cfg, o));
  add_dti_archives(lib, cfg);
  if (!o.archive.empty()) {
    const fs::path path = require_file(o.archive, "archive", "--archive");
    cfg.delta = archive_delta(path, o);
    if (cfg.policy == PolicyKind::Osl) throw ConfigError("--archive given but --policy is osl");
    lib.add_policy(cfg.policy, cfg.delta, path);
  }
  if (o.base_archives.size() > 1) throw ConfigError("expected at most one --base-archive");
  if (!o.base_archives.empty()) {
    const fs::path path = require_file(o.base_archives.front(), "base archive", "--base-archive");
    if (archive_delta(path, o) != cfg.delta) throw ConfigError("base archive delta differs from the policy's");
    lib.add_policy(PolicyKind::Pcp, cfg.delta, path);
  }
  if (cfg.policy != PolicyKind::Osl && o.archive.empty() && o.archive_dir.empty() && cfg.sweep.archive_dir.empty()) {
    throw ConfigError("eval of a learned policy needs --archive or --archive-dir");
  }
  return lib;
}

int eval(harness::RunConfig cfg, const Options& o, std::ostream& out) {
  harness::PolicyLibrary lib = policy_library(cfg, o);
  trainer::RolloutSpec spec = harness::rollout_spec(lib.setup(cfg.policy, cfg.delta), cfg.driver.spec(), cfg.greedy);
  spec.reward_params = cfg.reward;
  const auto seeds = harness::eval_seeds(cfg.seed, cfg.eval_episodes);
  const harness::EvalResult r = harness::evaluate(spec, cfg.ring, seeds, cfg.workers);
  const fs::path dir = output_dir(cfg);
  const std::string name = "eval_" + tag(cfg.policy, cfg.delta);
  write_file(dir / (name + ".json"), [&](std::ostream& f) { metrics::write_summary_json(std::span(&r.summary, 1), f); });
  write_file(dir / (name + ".csv"), [&](std::ostream& f) { metrics::write_summary_csv(std::span(&r.summary, 1), f); });
  write_file(dir / (name + "_episodes.csv"), [&](std::ostream& f) { write_episodes_csv(seeds, r.episodes, f); });
  print_row(r.summary, out);
  return 0;
}

int sweep(const harness::RunConfig& cfg, const Options& o, std::ostream& out) {
  const fs::path lib_dir = library_dir(cfg, o);
  if (lib_dir.empty()) throw ConfigError("sweep needs --archive-dir or [sweep] archive_dir");
  harness::PolicyLibrary lib(lib_dir);
  add_dti_archives(lib, cfg);
  std::vector<harness::PolicySetup> setups;
  for (PolicyKind kind : cfg.sweep.policies) {
    for (int delta : cfg.sweep.deltas) setups.push_back(lib.setup(kind, delta));
  }
  const auto seeds = harness::eval_seeds(cfg.seed, cfg.eval_episodes);
  const auto rows = harness::sweep(setups, cfg.sweep.offsets, cfg.driver.noise, cfg.ring, seeds, cfg.workers);
  const fs::path dir = output_dir(cfg);
  write_file(dir / "sweep.json", [&](std::ostream& f) { metrics::write_summary_json(rows, f); });
  write_file(dir / "sweep.csv", [&](std::ostream& f) { metrics::write_summary_csv(rows, f); });
  out << rows.size() << " summary rows -> " << (dir / "sweep.json").string() << '\n';
  return 0;
}

int plot_export(harness::RunConfig cfg, const Options& o, std::ostream& out) {
  harness::PolicyLibrary lib = policy_library(cfg, o);
  trainer::RolloutSpec spec = harness::rollout_spec(lib.setup(cfg.policy, cfg.delta), cfg.driver.spec(), cfg.greedy);
  spec.record = true;
  spec.capture_observations = !o.dti_archive.empty();
  const trainer::Episode ep = trainer::rollout(spec, cfg.ring, cfg.seed);
  const fs::path dir = output_dir(cfg);
  const std::string name = tag(cfg.policy, cfg.delta) + "_s" + std::to_string(cfg.seed);
  write_file(dir / ("space_time_" + name + ".csv"), [&](std::ostream& f) { metrics::export_space_time(ep.record, f); });
  write_file(dir / ("position_time_" + name + ".csv"),
             [&](std::ostream& f) { metrics::export_position_time(ep.record, f); });
  write_file(dir / ("record_" + name + ".csv"), [&](std::ostream& f) { ep.record.write_csv(f); });
  if (!o.dti_archive.empty()) {
    const dti::DtiModel model = harness::restore_dti(harness::load_archive(require_file(o.dti_archive, "DTI archive", "--dti-archive")));
    const auto trace = dti::rolling_trace(model, ep.observations, o.trace_stride);
    write_file(dir / ("latent_trace_" + name + ".csv"), [&](std::ostream& f) {
      f << "step";
      for (std::size_t k = 0; k < model.config().latent; ++k) f << ",z" << k + 1;
      f << '\n';
      f.precision(17);
      for (const auto& p : trace) {
        f << p.step;
        for (double z : p.z) f << ',' << z;
        f << '\n';
      }
    });
  }
  out << "exported " << ep.record.size() << " rows for " << name << " to " << dir.string() << '\n';
  return 0;
}

int drive_serve(const harness::RunConfig& cfg, const Options& o, std::ostream& out) {
  drive::ServerConfig sc;
  sc.address = o.address;
  sc.port = o.port;
  sc.static_root = o.static_dir;
  sc.session.ring = cfg.ring;
  sc.session.trial_seconds = o.trial_seconds;
  sc.lockstep = o.lockstep;

  const fs::path lib_dir = library_dir(cfg, o);
  harness::PolicyLibrary lib(lib_dir);
  add_dti_archives(lib, cfg);
  drive::PolicyResolver resolver = drive::osl_only();
  if (!lib_dir.empty()) {
    resolver = [&lib](PolicyKind kind, int delta) {
      return harness::rollout_spec(lib.setup(kind, delta), trainer::DriverSpec::perfect(), true);
    };
  }
  if (!o.record_dir.empty()) {
    const fs::path rec = o.record_dir;
    fs::create_directories(rec);
    sc.on_session_end = [rec, n = 0](const drive::SessionResult& r) mutable {
      const std::string name = "session_" + std::to_string(n++);
      write_file(rec / (name + "_record.csv"), [&](std::ostream& f) { r.record.write_csv(f); });
      write_file(rec / (name + "_controls.csv"), [&](std::ostream& f) {
        f << "# policy=" << advisory::to_string(r.start.policy) << "\n# delta=" << r.start.delta
          << "\n# seed=" << r.start.seed << "\n# end=" << drive::to_string(r.end.reason) << "\nstep,accel\n";
        f.precision(17);
        for (std::size_t i = 0; i < r.controls.size(); ++i) f << i << ',' << r.controls[i] << '\n';
      });
    };
  }
  drive::DriveServer server(sc, resolver);
  out << "drive server listening on http://" << sc.address << ':' << server.port() << " (WebSocket /session)"
      << std::endl;
  server.run();
  return 0;
}

void configure_logging(const std::string& level) {
  auto logger = spdlog::get("ringlab");
  if (!logger) logger = spdlog::stderr_color_mt("ringlab");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ring-road driving advisory experiments", "ringlab"};
  app.require_subcommand(1);
  Options o;

  const std::vector<std::string> kinds{"osl", "pcp", "rp", "perp", "tarp"};
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run configuration (INI)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Run seed; for training commands, the only training seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--policy", o.policy, "Policy kind")->check(CLI::IsMember(kinds));
    sub->add_option("--delta", o.delta, "Hold length in steps")->check(CLI::IsMember({50, 70, 100}));
    sub->add_option("--amax", o.amax, "Largest advisable speed, m/s")->check(CLI::IsMember({35.0, 10.0}));
    sub->add_flag_function(
        "--greedy,!--no-greedy", [&](std::int64_t n) { o.greedy = n > 0; }, "Act greedily when evaluating");
    sub->add_option("--workers", o.workers, "Rollout threads")->check(CLI::PositiveNumber);
    sub->add_option("--base-archive", o.base_archives, "Frozen base PCP archive");
    sub->add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  };
  auto archives = [&](CLI::App* sub) {
    sub->add_option("--archive", o.archive, "Policy archive to use for --policy");
    sub->add_option("--archive-dir", o.archive_dir, "Directory of <kind>_d<delta>.rlm and dti_<axis>.rlm");
  };

  std::function<int(const harness::RunConfig&)> action;
  auto command = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    common(sub);
    return sub;
  };

  auto* pcp = command("train-pcp", "Train base PCPs against a perfect follower and keep the best seed");
  pcp->callback([&] { action = [&](const auto& cfg) { return train_pcp(cfg, o, out); }; });

  auto* residual = command("train-residual", "Train RP, PeRP or TA-RP on top of a frozen base PCP");
  archives(residual);
  residual->callback([&] { action = [&](const auto& cfg) { return train_residual(cfg, o, out); }; });

  auto* dti_cmd = command("train-dti", "Train a driver-trait inference model");
  dti_cmd->add_option("--dataset", o.dataset, "Window dataset CSV; generated from --base-archive when absent");
  dti_cmd->callback([&] { action = [&](const auto& cfg) { return train_dti(cfg, o, out); }; });

  auto* data = command("gen-dataset", "Generate labelled observation windows for DTI training");
  data->callback([&] { action = [&](const auto& cfg) { return gen_dataset(cfg, o, out); }; });

  auto* ev = command("eval", "Evaluate one policy over seeded episodes");
  archives(ev);
  ev->callback([&] { action = [&](const auto& cfg) { return eval(cfg, o, out); }; });

  auto* sw = command("sweep", "Evaluate policy x delta x pinned offset");
  archives(sw);
  sw->callback([&] { action = [&](const auto& cfg) { return sweep(cfg, o, out); }; });

  auto* plot = command("plot-export", "Export space-time, position-time and latent traces of one episode");
  archives(plot);
  plot->add_option("--dti-archive", o.dti_archive, "DTI archive for a rolling latent trace");
  plot->add_option("--stride", o.trace_stride, "Steps between latent trace points")->check(CLI::PositiveNumber);
  plot->callback([&] { action = [&](const auto& cfg) { return plot_export(cfg, o, out); }; });

  auto* serve = command("drive-serve", "Serve the realtime drive session");
  archives(serve);
  serve->add_option("--address", o.address, "Listen address");
  serve->add_option("--port", o.port, "Listen port");
  serve->add_option("--static", o.static_dir, "Console bundle directory")->check(CLI::ExistingDirectory);
  serve->add_option("--record-dir", o.record_dir, "Write each trial's record and control trace here");
  serve->add_option("--trial-seconds", o.trial_seconds, "Trial length")->check(CLI::PositiveNumber);
  serve->add_flag("--lockstep", o.lockstep, "Consume one control per tick (scripted clients)");
  serve->callback([&] { action = [&](const auto& cfg) { return drive_serve(cfg, o, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    configure_logging(o.log_level);
    return action(load_config(o));
  } catch (const std::exception& e) {
    err << "ringlab: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ringlab::cli
