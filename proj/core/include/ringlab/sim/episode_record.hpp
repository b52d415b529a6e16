#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace ringlab::sim {

// Sentinel stored in the advice/driver columns while no advice is active.
inline constexpr double kNoAdvice = std::numeric_limits<double>::quiet_NaN();
inline bool has_advice(double value) { return !std::isnan(value); }

struct EpisodeRow {
  std::int64_t t = 0;
  double advice = kNoAdvice;         // m/s
  double driver_action = kNoAdvice;  // m/s
  std::vector<double> speed;         // m/s, per vehicle
  std::vector<double> headway;       // m, per vehicle
  std::vector<double> odometer;      // m, unwrapped per vehicle
};

// Per-step log of an episode. Row k describes the fleet after step t = rows[k].t.
struct EpisodeRecord {
  std::size_t vehicle_count = 0;
  std::size_t ego = 0;
  double time_step = 0.1;
  double circumference = 0.0;
  std::int64_t warmup_steps = 0;
  std::map<std::string, std::string> metadata;
  std::vector<EpisodeRow> rows;

  std::size_t size() const { return rows.size(); }
  std::vector<double> ego_speeds() const;
  std::vector<double> advice_trace() const;

  // CSV with header: t,advice,driver_action,v_0..v_{N-1},h_0..h_{N-1}.
  // Metadata lines precede the header as "# key=value".
  void write_csv(std::ostream& out) const;
  static EpisodeRecord read_csv(std::istream& in);
};

bool operator==(const EpisodeRow& a, const EpisodeRow& b);
// Bitwise comparison of every numeric field (NaN equals NaN).
bool identical(const EpisodeRecord& a, const EpisodeRecord& b);

}  // namespace ringlab::sim
