#include "ringlab/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "ringlab/error.hpp"

namespace ringlab::metrics {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double congestion_factor(double mu, double sigma) { return mu - std::log10(std::max(sigma, kSigmaFloor)); }

SpeedStats speed_stats(std::span<const double> speeds) {
  if (speeds.empty()) throw ContractError("speed statistics of an empty window");
  double sum = 0.0;
  for (double v : speeds) sum += v;
  const double mu = sum / static_cast<double>(speeds.size());
  double sq = 0.0;
  for (double v : speeds) sq += (v - mu) * (v - mu);
  const double sigma = std::sqrt(sq / static_cast<double>(speeds.size()));
  return {mu, sigma, congestion_factor(mu, sigma)};
}

Window advice_window(const sim::EpisodeRecord& record) {
  Window w{record.rows.size(), record.rows.size()};
  for (std::size_t i = 0; i < record.rows.size(); ++i) {
    if (record.rows[i].t > record.warmup_steps) {
      w.begin = i;
      break;
    }
  }
  return w;
}

EpisodeMetrics compute_metrics(const sim::EpisodeRecord& record, std::optional<Window> window) {
  const Window w = window.value_or(advice_window(record));
  if (w.begin >= w.end || w.end > record.rows.size()) {
    throw ContractError("metrics window [" + std::to_string(w.begin) + ", " + std::to_string(w.end) +
                        ") is empty or outside the record");
  }
  std::vector<double> v;
  v.reserve(w.end - w.begin);
  for (std::size_t i = w.begin; i < w.end; ++i) v.push_back(record.rows[i].speed.at(record.ego));
  const SpeedStats s = speed_stats(v);
  EpisodeMetrics m;
  m.mu = s.mu;
  m.sigma = s.sigma;
  m.cf = s.cf;
  m.steps = v.size();
  if (auto it = record.metadata.find("collision"); it != record.metadata.end()) m.collision = it->second == "1";
  if (auto it = record.metadata.find("policy"); it != record.metadata.end()) m.policy = it->second;
  if (auto it = record.metadata.find("hold_steps"); it != record.metadata.end()) m.hold_steps = std::stoi(it->second);
  if (auto it = record.metadata.find("driver.delay"); it != record.metadata.end()) {
    m.traits = "delay=" + it->second + ",offset=" + record.metadata.at("driver.offset");
  }
  return m;
}

void export_space_time(const sim::EpisodeRecord& record, std::ostream& out) {
  const std::size_t n = record.vehicle_count;
  out << "t_seconds,advice,v_ego";
  for (std::size_t k = 1; k < n; ++k) out << ",v_" << k;
  out << ",warmup_end\n";
  const std::size_t boundary = advice_window(record).begin;
  for (std::size_t r = 0; r < record.rows.size(); ++r) {
    const auto& row = record.rows[r];
    out << num(static_cast<double>(row.t) * record.time_step) << ',' << num(row.advice);
    for (std::size_t k = 0; k < n; ++k) out << ',' << num(row.speed.at((record.ego + k) % n));
    out << ',' << (r == boundary && boundary > 0 ? 1 : 0) << '\n';
  }
}

void export_position_time(const sim::EpisodeRecord& record, std::ostream& out) {
  out << "t,vehicle_id,position,speed\n";
  for (const auto& row : record.rows) {
    if (row.odometer.size() != record.vehicle_count) {
      throw DimensionError("position export needs odometer data for every vehicle");
    }
    for (std::size_t i = 0; i < record.vehicle_count; ++i) {
      out << row.t << ',' << i << ',' << num(row.odometer[i]) << ',' << num(row.speed[i]) << '\n';
    }
  }
}

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) return {};
  const SpeedStats s = speed_stats(values);
  return {s.mu, s.sigma};
}

SummaryRow summarize(std::span<const EpisodeMetrics> episodes) {
  if (episodes.empty()) throw ContractError("summary of zero episodes");
  SummaryRow row;
  row.policy = episodes.front().policy;
  row.hold_steps = episodes.front().hold_steps;
  row.traits = episodes.front().traits;
  row.episodes = episodes.size();
  std::vector<double> mu, sigma, cf;
  for (const auto& e : episodes) {
    mu.push_back(e.mu);
    sigma.push_back(e.sigma);
    cf.push_back(e.cf);
    if (e.collision) ++row.collisions;
    if (e.traits != row.traits) row.traits = "mixed";
  }
  row.mu = aggregate(mu);
  row.sigma = aggregate(sigma);
  row.cf = aggregate(cf);
  return row;
}

void write_summary_json(std::span<const SummaryRow> rows, std::ostream& out) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"policy", r.policy},
                     {"delta", r.hold_steps},
                     {"traits", r.traits},
                     {"episodes", r.episodes},
                     {"collisions", r.collisions},
                     {"mu", {{"mean", r.mu.mean}, {"std", r.mu.std}}},
                     {"sigma", {{"mean", r.sigma.mean}, {"std", r.sigma.std}}},
                     {"cf", {{"mean", r.cf.mean}, {"std", r.cf.std}}}};
    if (r.selected_seed) j["selected_seed"] = *r.selected_seed;
    doc.push_back(std::move(j));
  }
  out << doc.dump(2) << '\n';
}

void write_summary_csv(std::span<const SummaryRow> rows, std::ostream& out) {
  out << "policy,delta,traits,episodes,collisions,mu_mean,mu_std,sigma_mean,sigma_std,cf_mean,cf_std\n";
  for (const auto& r : rows) {
    out << r.policy << ',' << r.hold_steps << ",\"" << r.traits << "\"," << r.episodes << ',' << r.collisions
        << ',' << num(r.mu.mean) << ',' << num(r.mu.std) << ',' << num(r.sigma.mean) << ',' << num(r.sigma.std)
        << ',' << num(r.cf.mean) << ',' << num(r.cf.std) << '\n';
  }
}

}  // namespace ringlab::metrics
