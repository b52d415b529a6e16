#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ringlab/random.hpp"

namespace ringlab::driver {

inline constexpr std::array<double, 5> kDelayChoices{2.0, 3.0, 4.0, 5.0, 6.0};
inline constexpr std::array<double, 7> kOffsetChoices{-7.5, -5.0, -2.5, 0.0, 2.5, 5.0, 7.5};

struct DriverTraits {
  double reaction_delay = 2.0;    // s
  double intentional_offset = 0;  // m/s
  bool noise_enabled = true;

  int delay_steps(double time_step) const;
  bool operator==(const DriverTraits&) const = default;
};

DriverTraits sample_traits(Rng& rng);

// Writes/reads "driver.delay", "driver.offset" and "driver.noise".
void write_metadata(const DriverTraits& traits, std::map<std::string, std::string>& out);
DriverTraits read_metadata(const std::map<std::string, std::string>& in);

// Advice history addressed by advising step. Keeps the last `depth` entries.
class AdviceBuffer {
 public:
  explicit AdviceBuffer(std::size_t depth);

  // Records the advice issued at the next step (0, 1, 2, ...).
  void push(double advice);
  // Advice issued at `step`, or the no-advice sentinel when the step is
  // negative, not yet issued, or evicted.
  double at(std::int64_t step) const;
  std::int64_t steps() const { return next_; }
  std::size_t depth() const { return slots_.size(); }

 private:
  std::vector<double> slots_;
  std::int64_t next_ = 0;
};

struct FilterLimits {
  double time_step = 0.1;  // s
  double max_speed = 35.0; // m/s
};

// a_advice(t - sigma) + m + k clamped to [0, v_max]; the no-advice sentinel
// while t - sigma precedes the first advice. k ~ N(0, 1) is drawn per call.
double filter_advice(const AdviceBuffer& buffer, std::int64_t t, const DriverTraits& traits,
                     const FilterLimits& limits, Rng& rng);

// Buffer plus traits for one episode.
class SimulatedDriver {
 public:
  SimulatedDriver(DriverTraits traits, FilterLimits limits, Rng rng);

  // Records this step's advice and returns the speed the driver commands.
  double respond(double advice);
  const DriverTraits& traits() const { return traits_; }

 private:
  DriverTraits traits_;
  FilterLimits limits_;
  AdviceBuffer buffer_;
  Rng rng_;
};

}  // namespace ringlab::driver
