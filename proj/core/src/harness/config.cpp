#include "ringlab/harness/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ringlab/error.hpp"

namespace ringlab::harness {

namespace {

namespace pt = boost::property_tree;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + s + "'");
}

long long to_int(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + s + "'");
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& values, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += fmt(values[i]);
  }
  return out;
}

struct Binding {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class M>
Binding real(std::string section, std::string key, M member) {
  const std::string full = section + "." + key;
  return {section, key, [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
          [member, full](RunConfig& c, const std::string& v) { member(c) = to_double(full, v); }};
}

template <class M>
Binding integer(std::string section, std::string key, M member) {
  const std::string full = section + "." + key;
  return {section, key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member, full](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(member(c))>;
            const long long x = to_int(full, v);
            if (std::is_unsigned_v<T> && x < 0) throw ConfigError(full + ": must be >= 0");
            member(c) = static_cast<T>(x);
          }};
}

template <class M>
Binding boolean(std::string section, std::string key, M member) {
  const std::string full = section + "." + key;
  return {section, key, [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [member, full](RunConfig& c, const std::string& v) { member(c) = to_bool(full, v); }};
}

template <class M>
Binding text(std::string section, std::string key, M member) {
  return {section, key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

std::string driver_mode_name(trainer::DriverSpec::Mode m) {
  switch (m) {
    case trainer::DriverSpec::Mode::PerfectFollower: return "perfect";
    case trainer::DriverSpec::Mode::Fixed: return "fixed";
    case trainer::DriverSpec::Mode::Sampled: return "sampled";
  }
  return "sampled";
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    std::vector<Binding> b;
    b.push_back(integer("run", "format_version", [](RunConfig& c) -> int& { return c.format_version; }));
    b.push_back(integer("run", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    b.push_back({"run", "seeds",
                 [](const RunConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); },
                 [](RunConfig& c, const std::string& v) {
                   c.seeds.clear();
                   for (const auto& s : split_list(v)) c.seeds.push_back(static_cast<std::uint64_t>(to_int("run.seeds", s)));
                 }});
    b.push_back(text("run", "out", [](RunConfig& c) -> std::string& { return c.out; }));
    b.push_back({"run", "policy", [](const RunConfig& c) { return std::string(advisory::to_string(c.policy)); },
                 [](RunConfig& c, const std::string& v) { c.policy = advisory::parse_policy_kind(v); }});
    b.push_back(integer("run", "delta", [](RunConfig& c) -> int& { return c.delta; }));
    b.push_back(real("run", "amax", [](RunConfig& c) -> double& { return c.amax; }));
    b.push_back(boolean("run", "greedy", [](RunConfig& c) -> bool& { return c.greedy; }));
    b.push_back(integer("run", "eval_episodes", [](RunConfig& c) -> std::size_t& { return c.eval_episodes; }));
    b.push_back(integer("run", "workers", [](RunConfig& c) -> int& { return c.workers; }));

    b.push_back(real("ring", "circumference", [](RunConfig& c) -> double& { return c.ring.circumference; }));
    b.push_back(integer("ring", "vehicle_count", [](RunConfig& c) -> int& { return c.ring.vehicle_count; }));
    b.push_back(real("ring", "vehicle_length", [](RunConfig& c) -> double& { return c.ring.vehicle_length; }));
    b.push_back(real("ring", "time_step", [](RunConfig& c) -> double& { return c.ring.time_step; }));
    b.push_back(real("ring", "max_speed", [](RunConfig& c) -> double& { return c.ring.max_speed; }));
    b.push_back(real("ring", "accel_noise_std", [](RunConfig& c) -> double& { return c.ring.accel_noise_std; }));
    b.push_back(integer("ring", "warmup_steps", [](RunConfig& c) -> int& { return c.ring.warmup_steps; }));
    b.push_back(integer("ring", "horizon", [](RunConfig& c) -> int& { return c.ring.horizon; }));
    b.push_back(real("ring", "ego_accel_bound", [](RunConfig& c) -> double& { return c.ring.ego_accel_bound; }));
    b.push_back(real("ring", "init_speed_spread", [](RunConfig& c) -> double& { return c.ring.init_speed_spread; }));

    b.push_back(real("idm", "desired_speed", [](RunConfig& c) -> double& { return c.ring.idm.desired_speed; }));
    b.push_back(real("idm", "time_headway", [](RunConfig& c) -> double& { return c.ring.idm.time_headway; }));
    b.push_back(real("idm", "max_accel", [](RunConfig& c) -> double& { return c.ring.idm.max_accel; }));
    b.push_back(real("idm", "comfort_decel", [](RunConfig& c) -> double& { return c.ring.idm.comfort_decel; }));
    b.push_back(real("idm", "exponent", [](RunConfig& c) -> double& { return c.ring.idm.exponent; }));
    b.push_back(real("idm", "min_gap", [](RunConfig& c) -> double& { return c.ring.idm.min_gap; }));

    b.push_back(real("train", "gamma", [](RunConfig& c) -> double& { return c.train.gamma; }));
    b.push_back(real("train", "learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; }));
    b.push_back(real("train", "adam_beta1", [](RunConfig& c) -> double& { return c.train.adam_beta1; }));
    b.push_back(integer("train", "iterations", [](RunConfig& c) -> int& { return c.train.iterations; }));
    b.push_back(integer("train", "rollouts_per_update", [](RunConfig& c) -> int& { return c.train.rollouts_per_update; }));
    b.push_back(boolean("train", "normalize_advantages", [](RunConfig& c) -> bool& { return c.train.normalize_advantages; }));
    b.push_back({"train", "estimator",
                 [](const RunConfig& c) {
                   return std::string(c.train.estimator == trainer::TrainConfig::Estimator::Clipped ? "clipped" : "vanilla");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "vanilla") {
                     c.train.estimator = trainer::TrainConfig::Estimator::Vanilla;
                   } else if (v == "clipped") {
                     c.train.estimator = trainer::TrainConfig::Estimator::Clipped;
                   } else {
                     throw ConfigError("train.estimator: expected vanilla or clipped, got '" + v + "'");
                   }
                 }});
    b.push_back(real("train", "clip_epsilon", [](RunConfig& c) -> double& { return c.train.clip_epsilon; }));
    b.push_back(integer("train", "update_epochs", [](RunConfig& c) -> int& { return c.train.update_epochs; }));
    b.push_back(real("train", "max_grad_norm", [](RunConfig& c) -> double& { return c.train.max_grad_norm; }));
    b.push_back(boolean("train", "early_stop", [](RunConfig& c) -> bool& { return c.train.early_stop; }));
    b.push_back(integer("train", "convergence_window", [](RunConfig& c) -> int& { return c.train.convergence_window; }));
    b.push_back(real("train", "convergence_tolerance", [](RunConfig& c) -> double& { return c.train.convergence_tolerance; }));

    b.push_back(real("reward", "speed", [](RunConfig& c) -> double& { return c.reward.speed; }));
    b.push_back(real("reward", "headway", [](RunConfig& c) -> double& { return c.reward.headway; }));
    b.push_back(real("reward", "action", [](RunConfig& c) -> double& { return c.reward.action; }));
    b.push_back(real("reward", "action_sign", [](RunConfig& c) -> double& { return c.reward.action_sign; }));

    b.push_back({"driver", "mode", [](const RunConfig& c) { return driver_mode_name(c.driver.mode); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "perfect") {
                     c.driver.mode = trainer::DriverSpec::Mode::PerfectFollower;
                   } else if (v == "fixed") {
                     c.driver.mode = trainer::DriverSpec::Mode::Fixed;
                   } else if (v == "sampled") {
                     c.driver.mode = trainer::DriverSpec::Mode::Sampled;
                   } else {
                     throw ConfigError("driver.mode: expected perfect, fixed or sampled, got '" + v + "'");
                   }
                 }});
    b.push_back(boolean("driver", "noise", [](RunConfig& c) -> bool& { return c.driver.noise; }));
    b.push_back(real("driver", "delay", [](RunConfig& c) -> double& { return c.driver.delay; }));
    b.push_back(real("driver", "offset", [](RunConfig& c) -> double& { return c.driver.offset; }));

    b.push_back({"dti", "axis", [](const RunConfig& c) { return std::string(dti::to_string(c.dti.axis)); },
                 [](RunConfig& c, const std::string& v) { c.dti.axis = dti::parse_trait_axis(v); }});
    b.push_back(integer("dti", "window", [](RunConfig& c) -> std::size_t& { return c.dti.model.window; }));
    b.push_back(integer("dti", "hidden", [](RunConfig& c) -> std::size_t& { return c.dti.model.hidden; }));
    b.push_back(integer("dti", "latent", [](RunConfig& c) -> std::size_t& { return c.dti.model.latent; }));
    b.push_back(real("dti", "beta_recon", [](RunConfig& c) -> double& { return c.dti.model.beta_recon; }));
    b.push_back(real("dti", "beta_kl", [](RunConfig& c) -> double& { return c.dti.model.beta_kl; }));
    b.push_back(real("dti", "learning_rate", [](RunConfig& c) -> double& { return c.dti.model.learning_rate; }));
    b.push_back(integer("dti", "batch", [](RunConfig& c) -> std::size_t& { return c.dti.model.batch; }));
    b.push_back(integer("dti", "epochs", [](RunConfig& c) -> int& { return c.dti.model.epochs; }));
    b.push_back(integer("dti", "dataset_size", [](RunConfig& c) -> std::size_t& { return c.dti.dataset_size; }));
    b.push_back(integer("dti", "windows_per_episode", [](RunConfig& c) -> std::size_t& { return c.dti.windows_per_episode; }));
    b.push_back(real("dti", "test_fraction", [](RunConfig& c) -> double& { return c.dti.test_fraction; }));
    b.push_back(text("dti", "dataset", [](RunConfig& c) -> std::string& { return c.dti.dataset; }));
    b.push_back(text("dti", "delay_archive", [](RunConfig& c) -> std::string& { return c.dti.delay_archive; }));
    b.push_back(text("dti", "offset_archive", [](RunConfig& c) -> std::string& { return c.dti.offset_archive; }));

    b.push_back({"sweep", "policies",
                 [](const RunConfig& c) {
                   return join(c.sweep.policies, [](advisory::PolicyKind k) { return std::string(advisory::to_string(k)); });
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.policies.clear();
                   for (const auto& s : split_list(v)) c.sweep.policies.push_back(advisory::parse_policy_kind(s));
                 }});
    b.push_back({"sweep", "deltas",
                 [](const RunConfig& c) { return join(c.sweep.deltas, [](int d) { return std::to_string(d); }); },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.deltas.clear();
                   for (const auto& s : split_list(v)) c.sweep.deltas.push_back(static_cast<int>(to_int("sweep.deltas", s)));
                 }});
    b.push_back({"sweep", "offsets", [](const RunConfig& c) { return join(c.sweep.offsets, fmt_double); },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.offsets.clear();
                   for (const auto& s : split_list(v)) c.sweep.offsets.push_back(to_double("sweep.offsets", s));
                 }});
    b.push_back(text("sweep", "archive_dir", [](RunConfig& c) -> std::string& { return c.sweep.archive_dir; }));
    return b;
  }();
  return table;
}

}  // namespace

trainer::DriverSpec DriverConfig::spec() const {
  switch (mode) {
    case trainer::DriverSpec::Mode::PerfectFollower: return trainer::DriverSpec::perfect();
    case trainer::DriverSpec::Mode::Fixed: return trainer::DriverSpec::fixed({delay, offset, noise});
    case trainer::DriverSpec::Mode::Sampled: return trainer::DriverSpec::sampled(noise);
  }
  return trainer::DriverSpec::sampled(noise);
}

void RunConfig::validate() const {
  if (format_version != kConfigFormatVersion) {
    throw ConfigError("run.format_version " + std::to_string(format_version) + " is not supported (expected " +
                      std::to_string(kConfigFormatVersion) + ")");
  }
  ring.validate();
  train.validate();
  reward.validate();
  dti.model.validate();
  if (delta < 1) throw ConfigError("run.delta must be >= 1");
  if (!(amax > 0.0 && amax <= ring.max_speed)) throw ConfigError("run.amax must be in (0, ring.max_speed]");
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (eval_episodes < 1) throw ConfigError("run.eval_episodes must be >= 1");
  if (workers < 1) throw ConfigError("run.workers must be >= 1");
  if (dti.dataset_size < 1 || dti.windows_per_episode < 1) throw ConfigError("dti dataset sizes must be >= 1");
  if (!(dti.test_fraction >= 0.0 && dti.test_fraction < 1.0)) throw ConfigError("dti.test_fraction must be in [0, 1)");
  if (driver.mode == trainer::DriverSpec::Mode::Fixed && driver.delay < 0.0) {
    throw ConfigError("driver.delay must be >= 0");
  }
}

std::uint64_t RunConfig::hash() const {
  std::ostringstream out;
  write_run_config(*this, out);
  return fnv1a(out.str());
}

RunConfig parse_run_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  RunConfig cfg;
  const auto& table = bindings();
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) throw ConfigError("config key '" + section + "' is outside a section");
    for (const auto& [key, value] : keys) {
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const Binding& b) { return b.section == section && b.key == key; });
      if (it == table.end()) throw ConfigError("unknown config key '" + section + "." + key + "'");
      it->set(cfg, value.data());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  return parse_run_config(in);
}

void write_run_config(const RunConfig& cfg, std::ostream& out) {
  std::string section;
  for (const Binding& b : bindings()) {
    if (b.section != section) {
      if (!section.empty()) out << '\n';
      section = b.section;
      out << '[' << section << "]\n";
    }
    out << b.key << " = " << b.get(cfg) << '\n';
  }
}

}  // namespace ringlab::harness
