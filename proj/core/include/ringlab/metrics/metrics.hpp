#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ringlab/sim/episode_record.hpp"

namespace ringlab::metrics {

inline constexpr double kSigmaFloor = 1e-3;  // m/s

// CF = mu - log10(max(sigma, floor)).
double congestion_factor(double mu, double sigma);

struct SpeedStats {
  double mu = 0.0;
  double sigma = 0.0;  // population
  double cf = 0.0;
};

SpeedStats speed_stats(std::span<const double> speeds);

struct EpisodeMetrics {
  double mu = 0.0;
  double sigma = 0.0;
  double cf = 0.0;
  bool collision = false;
  int hold_steps = 0;
  std::string policy;
  std::string traits;  // e.g. "delay=3,offset=-2.5"; empty for a perfect follower
  std::size_t steps = 0;
};

// Row range [begin, end) of the record to score.
struct Window {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Rows after warm-up (t > warmup_steps).
Window advice_window(const sim::EpisodeRecord& record);

// Throws ContractError on an empty or out-of-range window.
EpisodeMetrics compute_metrics(const sim::EpisodeRecord& record, std::optional<Window> window = std::nullopt);

// Columns: t_seconds, advice, v_ego, v_1..v_{N-1} (remaining vehicles in ring
// order after the ego), warmup_end (1 on the first advised row).
void export_space_time(const sim::EpisodeRecord& record, std::ostream& out);

// Long format: t, vehicle_id, position (unwrapped, m), speed.
void export_position_time(const sim::EpisodeRecord& record, std::ostream& out);

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population, across episodes
};

Aggregate aggregate(std::span<const double> values);

struct SummaryRow {
  std::string policy;
  int hold_steps = 0;
  std::string traits;
  std::size_t episodes = 0;
  std::size_t collisions = 0;
  Aggregate mu, sigma, cf;
  std::optional<std::uint64_t> selected_seed;  // best-of-n training seed, when applicable
};

// Mean and std across episodes of the per-episode mu, sigma and CF.
SummaryRow summarize(std::span<const EpisodeMetrics> episodes);

void write_summary_json(std::span<const SummaryRow> rows, std::ostream& out);
void write_summary_csv(std::span<const SummaryRow> rows, std::ostream& out);

}  // namespace ringlab::metrics
