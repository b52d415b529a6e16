#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ringlab/dti/dti.hpp"
#include "ringlab/metrics/metrics.hpp"
#include "ringlab/trainer/rollout.hpp"

namespace ringlab::harness {

// A policy ready to act: its kind, hold length and frozen networks.
struct PolicySetup {
  advisory::PolicyKind kind = advisory::PolicyKind::Pcp;
  int hold_steps = 50;
  const advisory::PolicyModel* base = nullptr;
  const advisory::PolicyModel* residual = nullptr;
  trainer::LatentFactory latent;
};

trainer::RolloutSpec rollout_spec(const PolicySetup& setup, const trainer::DriverSpec& driver, bool greedy);

// PeRP conditioning from frozen DTI models (delay first, then offset).
trainer::LatentFactory dti_latents(std::vector<const dti::DtiModel*> models, dti::LatentMode mode);

// Pins one trait of an otherwise sampled driver.
struct TraitPin {
  dti::TraitAxis axis = dti::TraitAxis::Offset;
  double value = 0.0;
};

std::vector<std::uint64_t> eval_seeds(std::uint64_t run_seed, std::size_t count);

struct EvalResult {
  std::vector<metrics::EpisodeMetrics> episodes;
  metrics::SummaryRow summary;
};

// One recorded episode per seed, scored over the advised steps. Episodes
// fan out over `workers` threads; results are in seed order.
EvalResult evaluate(const trainer::RolloutSpec& spec, const sim::RingConfig& ring, std::span<const std::uint64_t> seeds,
                    int workers = 1, std::optional<TraitPin> pin = std::nullopt);

// Every setup crossed with every pinned offset, one summary row each.
std::vector<metrics::SummaryRow> sweep(std::span<const PolicySetup> setups, std::span<const double> offsets,
                                       bool driver_noise, const sim::RingConfig& ring,
                                       std::span<const std::uint64_t> seeds, int workers = 1);

struct Candidate {
  std::uint64_t seed = 0;
  metrics::SummaryRow summary;
};

// Highest mean CF; ties go to the lowest seed.
std::size_t select_best(std::span<const Candidate> candidates);

}  // namespace ringlab::harness
