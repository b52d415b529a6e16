#include "ringlab/sim/episode_record.hpp"

#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "ringlab/error.hpp"

namespace ringlab::sim {

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "nan" || s.empty()) return kNoAdvice;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw ConfigError("bad numeric field '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool same_bits(double a, double b) {
  if (std::isnan(a) && std::isnan(b)) return true;
  return std::memcmp(&a, &b, sizeof a) == 0;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_bits(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace

std::vector<double> EpisodeRecord::ego_speeds() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.speed.at(ego));
  return out;
}

std::vector<double> EpisodeRecord::advice_trace() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.advice);
  return out;
}

void EpisodeRecord::write_csv(std::ostream& out) const {
  out << "# vehicle_count=" << vehicle_count << '\n'
      << "# ego=" << ego << '\n'
      << "# time_step=" << fmt_double(time_step) << '\n'
      << "# circumference=" << fmt_double(circumference) << '\n'
      << "# warmup_steps=" << warmup_steps << '\n';
  for (const auto& [k, v] : metadata) out << "# " << k << '=' << v << '\n';
  out << "t,advice,driver_action";
  for (std::size_t i = 0; i < vehicle_count; ++i) out << ",v_" << i;
  for (std::size_t i = 0; i < vehicle_count; ++i) out << ",h_" << i;
  out << '\n';
  for (const auto& r : rows) {
    if (r.speed.size() != vehicle_count || r.headway.size() != vehicle_count) {
      throw DimensionError("episode row width does not match vehicle_count");
    }
    out << r.t << ',' << fmt_double(r.advice) << ',' << fmt_double(r.driver_action);
    for (double v : r.speed) out << ',' << fmt_double(v);
    for (double h : r.headway) out << ',' << fmt_double(h);
    out << '\n';
  }
}

EpisodeRecord EpisodeRecord::read_csv(std::istream& in) {
  EpisodeRecord rec;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2);
      const std::string value = line.substr(eq + 1);
      if (key == "vehicle_count") {
        rec.vehicle_count = std::stoul(value);
      } else if (key == "ego") {
        rec.ego = std::stoul(value);
      } else if (key == "time_step") {
        rec.time_step = parse_double(value);
      } else if (key == "circumference") {
        rec.circumference = parse_double(value);
      } else if (key == "warmup_steps") {
        rec.warmup_steps = std::stoll(value);
      } else {
        rec.metadata[key] = value;
      }
      continue;
    }
    const auto cells = split(line);
    if (!header_seen) {
      header_seen = true;
      if (cells.size() < 3 || cells[0] != "t") throw ConfigError("episode CSV is missing its header");
      const std::size_t n = (cells.size() - 3) / 2;
      if (rec.vehicle_count == 0) rec.vehicle_count = n;
      if (n != rec.vehicle_count || cells.size() != 3 + 2 * n) {
        throw DimensionError("episode CSV header width does not match vehicle_count");
      }
      continue;
    }
    const std::size_t n = rec.vehicle_count;
    if (cells.size() != 3 + 2 * n) throw DimensionError("episode CSV row has wrong width");
    EpisodeRow row;
    row.t = std::stoll(cells[0]);
    row.advice = parse_double(cells[1]);
    row.driver_action = parse_double(cells[2]);
    row.speed.reserve(n);
    row.headway.reserve(n);
    for (std::size_t i = 0; i < n; ++i) row.speed.push_back(parse_double(cells[3 + i]));
    for (std::size_t i = 0; i < n; ++i) row.headway.push_back(parse_double(cells[3 + n + i]));
    rec.rows.push_back(std::move(row));
  }
  if (!header_seen) throw ConfigError("episode CSV is missing its header");
  return rec;
}

bool operator==(const EpisodeRow& a, const EpisodeRow& b) {
  return a.t == b.t && same_bits(a.advice, b.advice) && same_bits(a.driver_action, b.driver_action) &&
         same_bits(a.speed, b.speed) && same_bits(a.headway, b.headway) &&
         same_bits(a.odometer, b.odometer);
}

bool identical(const EpisodeRecord& a, const EpisodeRecord& b) {
  return a.vehicle_count == b.vehicle_count && a.ego == b.ego && same_bits(a.time_step, b.time_step) &&
         same_bits(a.circumference, b.circumference) && a.warmup_steps == b.warmup_steps &&
         a.metadata == b.metadata && a.rows == b.rows;
}

}  // namespace ringlab::sim
