#include "ringlab/driver/driver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ringlab/error.hpp"
#include "ringlab/sim/episode_record.hpp"

namespace ringlab::driver {

int DriverTraits::delay_steps(double time_step) const {
  return static_cast<int>(std::lround(reaction_delay / time_step));
}

DriverTraits sample_traits(Rng& rng) {
  std::uniform_int_distribution<std::size_t> delay(0, kDelayChoices.size() - 1);
  std::uniform_int_distribution<std::size_t> offset(0, kOffsetChoices.size() - 1);
  DriverTraits t;
  t.reaction_delay = kDelayChoices[delay(rng)];
  t.intentional_offset = kOffsetChoices[offset(rng)];
  t.noise_enabled = true;
  return t;
}

void write_metadata(const DriverTraits& traits, std::map<std::string, std::string>& out) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", traits.reaction_delay);
  out["driver.delay"] = buf;
  std::snprintf(buf, sizeof buf, "%.17g", traits.intentional_offset);
  out["driver.offset"] = buf;
  out["driver.noise"] = traits.noise_enabled ? "1" : "0";
}

DriverTraits read_metadata(const std::map<std::string, std::string>& in) {
  DriverTraits t;
  try {
    t.reaction_delay = std::stod(in.at("driver.delay"));
    t.intentional_offset = std::stod(in.at("driver.offset"));
    t.noise_enabled = in.at("driver.noise") == "1";
  } catch (const std::exception& e) {
    throw ConfigError(std::string("driver traits missing from metadata: ") + e.what());
  }
  return t;
}

AdviceBuffer::AdviceBuffer(std::size_t depth) : slots_(std::max<std::size_t>(depth, 1), sim::kNoAdvice) {}

void AdviceBuffer::push(double advice) {
  slots_[static_cast<std::size_t>(next_) % slots_.size()] = advice;
  ++next_;
}

double AdviceBuffer::at(std::int64_t step) const {
  if (step < 0 || step >= next_ || next_ - step > static_cast<std::int64_t>(slots_.size())) {
    return sim::kNoAdvice;
  }
  return slots_[static_cast<std::size_t>(step) % slots_.size()];
}

double filter_advice(const AdviceBuffer& buffer, std::int64_t t, const DriverTraits& traits,
                     const FilterLimits& limits, Rng& rng) {
  const double delayed = buffer.at(t - traits.delay_steps(limits.time_step));
  if (!sim::has_advice(delayed)) return sim::kNoAdvice;
  double k = 0.0;
  if (traits.noise_enabled) k = std::normal_distribution<double>(0.0, 1.0)(rng);
  return std::clamp(delayed + traits.intentional_offset + k, 0.0, limits.max_speed);
}

SimulatedDriver::SimulatedDriver(DriverTraits traits, FilterLimits limits, Rng rng)
    : traits_(traits),
      limits_(limits),
      buffer_(static_cast<std::size_t>(traits.delay_steps(limits.time_step)) + 1),
      rng_(std::move(rng)) {}

double SimulatedDriver::respond(double advice) {
  buffer_.push(advice);
  return filter_advice(buffer_, buffer_.steps() - 1, traits_, limits_, rng_);
}

}  // namespace ringlab::driver
