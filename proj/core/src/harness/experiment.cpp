#include "ringlab/harness/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "ringlab/error.hpp"

namespace ringlab::harness {

namespace {

std::string trait_label(const TraitPin& pin) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s=%g", std::string(dti::to_string(pin.axis)).c_str(), pin.value);
  return buf;
}

}  // namespace

trainer::RolloutSpec rollout_spec(const PolicySetup& setup, const trainer::DriverSpec& driver, bool greedy) {
  trainer::RolloutSpec spec;
  spec.kind = setup.kind;
  spec.hold_steps = setup.hold_steps;
  spec.base = setup.base;
  spec.residual = setup.residual;
  spec.latent = setup.latent;
  spec.driver = driver;
  spec.mode = greedy ? advisory::ActMode::Greedy : advisory::ActMode::Sample;
  spec.reward = advisory::is_residual(setup.kind) ? trainer::RewardKind::Residual : trainer::RewardKind::PolicyCentric;
  return spec;
}

trainer::LatentFactory dti_latents(std::vector<const dti::DtiModel*> models, dti::LatentMode mode) {
  return [models = std::move(models), mode](const driver::DriverTraits&) -> std::unique_ptr<advisory::LatentSource> {
    return std::make_unique<dti::DtiLatent>(models, mode);
  };
}

std::vector<std::uint64_t> eval_seeds(std::uint64_t run_seed, std::size_t count) {
  const SeedStreams streams(run_seed);
  std::vector<std::uint64_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(streams.derive("eval", i));
  return out;
}

EvalResult evaluate(const trainer::RolloutSpec& spec, const sim::RingConfig& ring, std::span<const std::uint64_t> seeds,
                    int workers, std::optional<TraitPin> pin) {
  if (seeds.empty()) throw ContractError("evaluate needs at least one seed");
  EvalResult result;
  result.episodes.resize(seeds.size());
  auto run = [&](std::size_t i) {
    trainer::RolloutSpec s = spec;
    s.record = true;
    if (pin) {
      Rng r = SeedStreams(seeds[i]).stream("driver.pin");
      driver::DriverTraits traits = driver::sample_traits(r);
      traits.noise_enabled = spec.driver.noise;
      if (pin->axis == dti::TraitAxis::Delay) {
        traits.reaction_delay = pin->value;
      } else {
        traits.intentional_offset = pin->value;
      }
      s.driver = trainer::DriverSpec::fixed(traits);
    }
    const trainer::Episode ep = trainer::rollout(s, ring, seeds[i]);
    metrics::EpisodeMetrics m = metrics::compute_metrics(ep.record);
    if (pin) m.traits = trait_label(*pin);
    result.episodes[i] = std::move(m);
  };

  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < std::min(threads, seeds.size()); ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < seeds.size(); i = next++) {
            try {
              run(i);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
            }
          }
        });
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  result.summary = metrics::summarize(result.episodes);
  return result;
}

std::vector<metrics::SummaryRow> sweep(std::span<const PolicySetup> setups, std::span<const double> offsets,
                                       bool driver_noise, const sim::RingConfig& ring,
                                       std::span<const std::uint64_t> seeds, int workers) {
  std::vector<metrics::SummaryRow> rows;
  rows.reserve(setups.size() * offsets.size());
  for (const PolicySetup& setup : setups) {
    const trainer::RolloutSpec spec = rollout_spec(setup, trainer::DriverSpec::sampled(driver_noise), true);
    for (double offset : offsets) {
      rows.push_back(evaluate(spec, ring, seeds, workers, TraitPin{dti::TraitAxis::Offset, offset}).summary);
    }
  }
  return rows;
}

std::size_t select_best(std::span<const Candidate> candidates) {
  if (candidates.empty()) throw ContractError("select_best needs at least one candidate");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double a = candidates[i].summary.cf.mean, b = candidates[best].summary.cf.mean;
    if (a > b || (a == b && candidates[i].seed < candidates[best].seed)) best = i;
  }
  return best;
}

}  // namespace ringlab::harness
