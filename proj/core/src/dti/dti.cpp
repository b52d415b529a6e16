#include "ringlab/dti/dti.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "ringlab/error.hpp"
#include "ringlab/nn/optimizer.hpp"
#include "ringlab/trainer/rollout.hpp"

namespace ringlab::dti {

namespace {

using nn::Graph;
using nn::Tensor;
using nn::Var;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = n01(rng);
  return t;
}

std::vector<const Window*> pointers(std::span<const LabeledWindow> data, std::span<const std::size_t> index) {
  std::vector<const Window*> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(&data[i].x);
  return out;
}

class Fnv {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= c[i];
      h_ *= 1099511628211ULL;
    }
  }
  template <class T>
  void value(const T& v) {
    bytes(&v, sizeof v);
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ULL;
};

double distance2(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

}  // namespace

void DtiConfig::validate() const {
  if (window < 1) throw ConfigError("dti window must be >= 1");
  if (hidden < 1 || latent < 1) throw ConfigError("dti hidden and latent sizes must be >= 1");
  if (!(beta_recon >= 0.0) || !(beta_kl >= 0.0)) throw ConfigError("dti loss weights must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("dti learning rate must be >= 0");
  if (batch < 1) throw ConfigError("dti batch must be >= 1");
  if (epochs < 0) throw ConfigError("dti epochs must be >= 0");
}

LossParts dti_loss(Var x_hat, Var x, Var mu, Var log_var, double beta_recon, double beta_kl) {
  if (!x_hat.value().same_shape(x.value())) throw DimensionError("dti_loss: reconstruction shape mismatch");
  if (!mu.value().same_shape(log_var.value()) || mu.rows() != x.rows()) {
    throw DimensionError("dti_loss: latent shape mismatch");
  }
  Var recon = nn::mean(nn::row_norm(nn::sub(x_hat, x)));
  Var per_dim = nn::scale(nn::sub(nn::add_scalar(nn::add(nn::square(mu), nn::exp(log_var)), -1.0), log_var), 0.5);
  Var kl = nn::mean(nn::sum_cols(per_dim));
  Var total = nn::add(nn::scale(recon, beta_recon), nn::scale(kl, beta_kl));
  return {total, recon, kl};
}

DtiModel::DtiModel(std::string name, const DtiConfig& cfg)
    : name_(std::move(name)),
      cfg_(cfg),
      encoder_(name_ + ".encoder", kFeatures, cfg.hidden),
      mu_head_(name_ + ".mu", cfg.hidden, cfg.latent),
      log_var_head_(name_ + ".log_var", cfg.hidden, cfg.latent),
      decoder_(name_ + ".decoder", cfg.latent, cfg.hidden),
      output_(name_ + ".output", cfg.hidden, kFeatures) {
  cfg_.validate();
}

void DtiModel::initialize(Rng& rng) {
  encoder_.initialize(rng);
  mu_head_.initialize(rng);
  log_var_head_.initialize(rng);
  decoder_.initialize(rng);
  output_.initialize(rng);
}

DtiModel::Encoded DtiModel::encode(Graph& g, std::span<const Window* const> batch) {
  const std::size_t b = batch.size();
  const std::size_t width = cfg_.window * kFeatures;
  for (const Window* w : batch) {
    if (w->size() != width) {
      throw DimensionError(name_ + ": window has " + std::to_string(w->size()) + " values, expected " +
                           std::to_string(width));
    }
  }
  nn::LstmState state = encoder_.zero_state(g, b);
  for (std::size_t t = 0; t < cfg_.window; ++t) {
    Tensor step = Tensor::matrix(b, kFeatures);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t k = 0; k < kFeatures; ++k) step.at(r, k) = (*batch[r])[t * kFeatures + k];
    }
    state = encoder_.forward(g, g.constant(std::move(step)), state);
  }
  return {mu_head_.forward(g, state.hidden), log_var_head_.forward(g, state.hidden)};
}

DtiModel::Forward DtiModel::forward(Graph& g, std::span<const Window* const> batch, const Tensor& noise) {
  if (batch.empty()) throw DimensionError(name_ + ": empty batch");
  if (noise.rows() != batch.size() || noise.cols() != cfg_.latent) {
    throw DimensionError(name_ + ": noise must be batch x latent");
  }
  Encoded enc = encode(g, batch);
  Var sigma = nn::exp(nn::scale(enc.log_var, 0.5));
  Var z = nn::add(enc.mu, nn::mul(sigma, g.constant(noise)));

  nn::LstmState state = decoder_.zero_state(g, batch.size());
  Var x_hat;
  for (std::size_t t = 0; t < cfg_.window; ++t) {
    state = decoder_.forward(g, z, state);
    Var out = output_.forward(g, state.hidden);
    x_hat = t == 0 ? out : nn::concat_cols(x_hat, out);
  }

  const std::size_t width = cfg_.window * kFeatures;
  Tensor target = Tensor::matrix(batch.size(), width);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    std::copy(batch[r]->begin(), batch[r]->end(), target.data().begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return {enc.mu, enc.log_var, z, x_hat, g.constant(std::move(target))};
}

LossParts DtiModel::loss(Graph& g, std::span<const Window* const> batch, const Tensor& noise) {
  const Forward f = forward(g, batch, noise);
  return dti_loss(f.x_hat, f.x, f.mu, f.log_var, cfg_.beta_recon, cfg_.beta_kl);
}

LatentTrait DtiModel::infer(std::span<const double> window, LatentMode mode, Rng& rng) const {
  if (window.size() != cfg_.window * kFeatures) {
    throw DimensionError(name_ + ": window has " + std::to_string(window.size()) + " values, expected " +
                         std::to_string(cfg_.window * kFeatures));
  }
  std::vector<double> hidden(cfg_.hidden, 0.0), cell(cfg_.hidden, 0.0);
  for (std::size_t t = 0; t < cfg_.window; ++t) {
    encoder_.step(window.subspan(t * kFeatures, kFeatures), hidden, cell);
  }
  LatentTrait out;
  out.mu = mu_head_.evaluate(hidden);
  const std::vector<double> log_var = log_var_head_.evaluate(hidden);
  out.sigma.resize(log_var.size());
  for (std::size_t i = 0; i < log_var.size(); ++i) out.sigma[i] = std::exp(0.5 * log_var[i]);
  out.z = out.mu;
  if (mode == LatentMode::Sample) {
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t i = 0; i < out.z.size(); ++i) out.z[i] += out.sigma[i] * n01(rng);
  }
  return out;
}

std::vector<nn::Parameter*> DtiModel::parameters() {
  return {&encoder_.weight(),    &encoder_.bias(),    &mu_head_.weight(), &mu_head_.bias(),
          &log_var_head_.weight(), &log_var_head_.bias(), &decoder_.weight(), &decoder_.bias(),
          &output_.weight(),     &output_.bias()};
}

std::vector<const nn::Parameter*> DtiModel::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (nn::Parameter* p : const_cast<DtiModel*>(this)->parameters()) out.push_back(p);
  return out;
}

std::string_view to_string(TraitAxis axis) {
  return axis == TraitAxis::Delay ? "delay" : "offset";
}

TraitAxis parse_trait_axis(std::string_view text) {
  if (text == "delay") return TraitAxis::Delay;
  if (text == "offset") return TraitAxis::Offset;
  throw ConfigError("unknown trait axis '" + std::string(text) + "'");
}

std::vector<double> trait_values(TraitAxis axis) {
  if (axis == TraitAxis::Delay) return {driver::kDelayChoices.begin(), driver::kDelayChoices.end()};
  return {driver::kOffsetChoices.begin(), driver::kOffsetChoices.end()};
}

double trait_of(const driver::DriverTraits& traits, TraitAxis axis) {
  return axis == TraitAxis::Delay ? traits.reaction_delay : traits.intentional_offset;
}

std::uint64_t Dataset::fingerprint() const {
  Fnv h;
  h.value(static_cast<int>(axis));
  h.value(window);
  for (const auto* part : {&train, &test}) {
    h.value(part->size());
    for (const LabeledWindow& w : *part) {
      h.bytes(w.x.data(), w.x.size() * sizeof(double));
      h.value(w.traits.reaction_delay);
      h.value(w.traits.intentional_offset);
      h.value(w.traits.noise_enabled);
      h.value(w.hold_steps);
      h.value(w.advice_changes);
      h.value(w.episode);
    }
  }
  return h.digest();
}

Window window_from(std::span<const advisory::Observation> observations, std::size_t length) {
  if (observations.empty()) throw DimensionError("window_from: no observations");
  Window out;
  out.reserve(length * kFeatures);
  const std::size_t have = std::min(length, observations.size());
  const std::size_t first = observations.size() - have;
  for (std::size_t i = have; i < length; ++i) {
    const auto v = observations[first].values();
    out.insert(out.end(), v.begin(), v.end());
  }
  for (std::size_t i = first; i < observations.size(); ++i) {
    const auto v = observations[i].values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

Dataset gen_dataset(const DatasetSpec& spec) {
  if (spec.base_policies.empty()) throw ConfigError("gen_dataset needs at least one base policy");
  if (spec.window < 1 || spec.windows_per_episode < 1) throw ConfigError("gen_dataset: window sizes must be >= 1");
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0)) {
    throw ConfigError("gen_dataset: test_fraction must be in [0, 1)");
  }
  const auto segment = static_cast<std::size_t>(spec.ring.horizon) / spec.windows_per_episode;
  if (segment < spec.window) throw ConfigError("gen_dataset: horizon too short for the requested windows");

  const std::vector<double> classes = trait_values(spec.axis);
  const TraitAxis other = spec.axis == TraitAxis::Delay ? TraitAxis::Offset : TraitAxis::Delay;
  const std::vector<double> other_values = trait_values(other);
  std::vector<std::pair<int, const advisory::PolicyModel*>> bases(spec.base_policies.begin(),
                                                                   spec.base_policies.end());

  const SeedStreams streams(spec.seed);
  Rng pick = streams.stream("dti.traits");
  Rng slicer = streams.stream("dti.slice");
  std::uniform_int_distribution<std::size_t> other_dist(0, other_values.size() - 1);

  Dataset data;
  data.axis = spec.axis;
  data.window = spec.window;
  std::uint64_t episode_index = 0;
  std::size_t base_cursor = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const std::size_t quota = spec.size / classes.size() + (c < spec.size % classes.size() ? 1 : 0);
    std::vector<std::vector<LabeledWindow>> episodes;
    std::size_t made = 0;
    while (made < quota) {
      driver::DriverTraits traits;
      traits.noise_enabled = true;
      const double o = other_values[other_dist(pick)];
      if (spec.axis == TraitAxis::Delay) {
        traits.reaction_delay = classes[c];
        traits.intentional_offset = o;
      } else {
        traits.reaction_delay = o;
        traits.intentional_offset = classes[c];
      }
      const auto& [hold, base] = bases[base_cursor++ % bases.size()];

      trainer::RolloutSpec rs;
      rs.kind = advisory::PolicyKind::Pcp;
      rs.hold_steps = hold;
      rs.base = base;
      rs.mode = spec.mode;
      rs.driver = trainer::DriverSpec::fixed(traits);
      rs.capture_observations = true;
      const std::uint64_t id = episode_index++;
      const trainer::Episode ep = trainer::rollout(rs, spec.ring, streams.derive("dti.episode", id));
      if (ep.batch.collision) {
        spdlog::info("dataset episode {} collided, resampling", id);
        continue;
      }

      std::vector<LabeledWindow> windows;
      const std::size_t take = std::min(spec.windows_per_episode, quota - made);
      std::uniform_int_distribution<std::size_t> jitter(0, segment - spec.window);
      for (std::size_t k = 0; k < take; ++k) {
        const std::size_t start = k * segment + jitter(slicer);
        LabeledWindow w;
        w.x = window_from(std::span(ep.observations).subspan(start, spec.window), spec.window);
        w.traits = traits;
        w.hold_steps = hold;
        w.episode = id;
        const auto advice = std::span(ep.advice).subspan(start, spec.window);
        for (std::size_t i = 1; i < advice.size() && !w.advice_changes; ++i) {
          w.advice_changes = sim::has_advice(advice[i]) && sim::has_advice(advice[i - 1]) && advice[i] != advice[i - 1];
        }
        windows.push_back(std::move(w));
      }
      made += take;
      episodes.push_back(std::move(windows));
    }
    const auto test_episodes =
        static_cast<std::size_t>(std::lround(spec.test_fraction * static_cast<double>(episodes.size())));
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      auto& sink = e + test_episodes >= episodes.size() ? data.test : data.train;
      for (LabeledWindow& w : episodes[e]) sink.push_back(std::move(w));
    }
  }
  return data;
}

void write_dataset(const Dataset& data, std::ostream& out) {
  out << "# axis=" << to_string(data.axis) << '\n' << "# window=" << data.window << '\n';
  out << "split,episode,delay,offset,noise,hold_steps,advice_changes";
  for (std::size_t t = 0; t < data.window; ++t) out << ",v_" << t << ",vl_" << t << ",h_" << t;
  out << '\n';
  auto emit = [&](const char* split, const std::vector<LabeledWindow>& part) {
    for (const LabeledWindow& w : part) {
      out << split << ',' << w.episode << ',' << fmt_double(w.traits.reaction_delay) << ','
          << fmt_double(w.traits.intentional_offset) << ',' << (w.traits.noise_enabled ? 1 : 0) << ','
          << w.hold_steps << ',' << (w.advice_changes ? 1 : 0);
      for (double v : w.x) out << ',' << fmt_double(v);
      out << '\n';
    }
  };
  emit("train", data.train);
  emit("test", data.test);
}

Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "axis") data.axis = parse_trait_axis(value);
      if (key == "window") data.window = std::stoul(value);
      continue;
    }
    if (!header) {
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7 + data.window * kFeatures) throw DimensionError("dataset row has wrong width");
    LabeledWindow w;
    w.episode = std::stoull(cells[1]);
    w.traits.reaction_delay = std::stod(cells[2]);
    w.traits.intentional_offset = std::stod(cells[3]);
    w.traits.noise_enabled = cells[4] == "1";
    w.hold_steps = std::stoi(cells[5]);
    w.advice_changes = cells[6] == "1";
    w.x.reserve(data.window * kFeatures);
    for (std::size_t i = 7; i < cells.size(); ++i) w.x.push_back(std::stod(cells[i]));
    if (cells[0] == "train") {
      data.train.push_back(std::move(w));
    } else if (cells[0] == "test") {
      data.test.push_back(std::move(w));
    } else {
      throw ConfigError("dataset row has unknown split '" + cells[0] + "'");
    }
  }
  if (!header) throw ConfigError("dataset file is missing its header");
  return data;
}

double evaluate_loss(DtiModel& model, std::span<const LabeledWindow> data, std::uint64_t seed) {
  if (data.empty()) throw ContractError("evaluate_loss on an empty set");
  Rng noise = SeedStreams(seed).stream("dti.eval");
  const std::size_t chunk = 64;
  double total = 0.0;
  std::vector<std::size_t> index;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    index.resize(end - begin);
    std::iota(index.begin(), index.end(), begin);
    const auto batch = pointers(data, index);
    Graph g;
    const LossParts parts = model.loss(g, batch, normal_matrix(batch.size(), model.config().latent, noise));
    total += parts.total.value().item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(data.size());
}

std::vector<EpochLoss> train_dti(DtiModel& model, std::span<const LabeledWindow> train,
                                 std::span<const LabeledWindow> test, const DtiConfig& cfg,
                                 const EpochFn& progress) {
  cfg.validate();
  if (train.empty()) throw ContractError("train_dti needs a non-empty training set");
  const SeedStreams streams(cfg.seed);
  Rng shuffle = streams.stream("dti.shuffle");
  Rng noise = streams.stream("dti.noise");
  nn::AdamOptimizer adam({.learning_rate = cfg.learning_rate});
  const auto params = model.parameters();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochLoss> history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch);
      const auto batch = pointers(train, std::span(order).subspan(begin, end - begin));
      Graph g;
      const LossParts parts = model.loss(g, batch, normal_matrix(batch.size(), cfg.latent, noise));
      const double value = parts.total.value().item();
      if (!std::isfinite(value)) {
        throw NumericError(model.name() + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(begin / cfg.batch) + " (recon " +
                           fmt_double(parts.recon.value().item()) + ", kl " + fmt_double(parts.kl.value().item()) +
                           ")");
      }
      adam.apply(params, g.backward(parts.total));
      sum += value * static_cast<double>(batch.size());
    }
    EpochLoss e{epoch, sum / static_cast<double>(train.size()), 0.0};
    e.test_loss = test.empty() ? std::numeric_limits<double>::quiet_NaN() : evaluate_loss(model, test, cfg.seed);
    history.push_back(e);
    if (progress) progress(e);
  }
  return history;
}

std::vector<LatentPoint> embed(const DtiModel& model, std::span<const LabeledWindow> data, TraitAxis axis,
                               bool changes_only) {
  Rng unused(0);
  std::vector<LatentPoint> out;
  for (const LabeledWindow& w : data) {
    if (changes_only && !w.advice_changes) continue;
    out.push_back({model.infer(w.x, LatentMode::Mean, unused).z, trait_of(w.traits, axis), w.hold_steps});
  }
  return out;
}

double silhouette_score(std::span<const LatentPoint> points) {
  std::vector<double> labels;
  for (const LatentPoint& p : points) labels.push_back(p.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (labels.size() < 2) throw ContractError("silhouette needs at least two classes");

  double total = 0.0;
  std::vector<double> dist_sum(labels.size());
  std::vector<std::size_t> count(labels.size());
  for (const LatentPoint& p : points) {
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (const LatentPoint& q : points) {
      if (&p == &q) continue;
      const auto c = static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), q.label) - labels.begin());
      dist_sum[c] += std::sqrt(distance2(p.z, q.z));
      ++count[c];
    }
    const auto own = static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), p.label) - labels.begin());
    if (count[own] == 0) continue;
    const double a = dist_sum[own] / static_cast<double>(count[own]);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < labels.size(); ++c) {
      if (c != own && count[c] > 0) b = std::min(b, dist_sum[c] / static_cast<double>(count[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(points.size());
}

SeparationReport separation(std::span<const LatentPoint> reference, std::span<const LatentPoint> query,
                            std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  SeparationReport rep;
  rep.evaluated = query.size();
  std::vector<double> labels;
  for (const LatentPoint& p : query) labels.push_back(p.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  rep.classes = labels.size();
  rep.chance = labels.empty() ? 0.0 : 1.0 / static_cast<double>(labels.size());
  if (query.empty() || reference.empty()) return rep;

  std::size_t correct = 0;
  std::vector<std::pair<double, std::size_t>> nearest(reference.size());
  for (const LatentPoint& q : query) {
    for (std::size_t i = 0; i < reference.size(); ++i) nearest[i] = {distance2(q.z, reference[i].z), i};
    const std::size_t kk = std::min(k, reference.size());
    std::partial_sort(nearest.begin(), nearest.begin() + static_cast<std::ptrdiff_t>(kk), nearest.end());
    // Votes in distance order, so the first label to reach the top count is the nearest among ties.
    std::vector<std::pair<double, int>> votes;
    for (std::size_t i = 0; i < kk; ++i) {
      const double label = reference[nearest[i].second].label;
      auto it = std::find_if(votes.begin(), votes.end(), [&](const auto& v) { return v.first == label; });
      if (it == votes.end()) {
        votes.emplace_back(label, 1);
      } else {
        ++it->second;
      }
    }
    const auto best = std::max_element(votes.begin(), votes.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    if (best->first == q.label) ++correct;
  }
  rep.knn_accuracy = static_cast<double>(correct) / static_cast<double>(query.size());
  if (rep.classes >= 2) rep.silhouette = silhouette_score(query);
  return rep;
}

SeparationReport latent_separation_report(const DtiModel& model, const Dataset& data, std::size_t k) {
  const auto reference = embed(model, data.train, data.axis, true);
  const auto query = embed(model, data.test, data.axis, true);
  return separation(reference, query, k);
}

void write_latent_scatter(std::span<const LatentPoint> points, std::ostream& out) {
  out << "z1,z2,trait_label,delta\n";
  for (const LatentPoint& p : points) {
    out << fmt_double(p.z.at(0)) << ',' << fmt_double(p.z.size() > 1 ? p.z[1] : 0.0) << ',' << fmt_double(p.label)
        << ',' << p.hold_steps << '\n';
  }
}

std::vector<TracePoint> rolling_trace(const DtiModel& model, std::span<const advisory::Observation> observations,
                                      std::size_t stride) {
  if (stride < 1) throw ConfigError("rolling_trace stride must be >= 1");
  const std::size_t t = model.config().window;
  Rng unused(0);
  std::vector<TracePoint> out;
  for (std::size_t end = t; end <= observations.size(); end += stride) {
    const Window w = window_from(observations.first(end), t);
    out.push_back({end, model.infer(w, LatentMode::Mean, unused).z});
  }
  return out;
}

DtiLatent::DtiLatent(std::vector<const DtiModel*> models, LatentMode mode) : models_(std::move(models)), mode_(mode) {
  if (models_.empty()) throw ConfigError("DtiLatent needs at least one model");
  for (const DtiModel* m : models_) {
    if (m == nullptr) throw ContractError("DtiLatent received a null model");
  }
}

std::size_t DtiLatent::dim() const {
  std::size_t d = 0;
  for (const DtiModel* m : models_) d += m->config().latent;
  return d;
}

std::size_t DtiLatent::history_length() const {
  std::size_t n = 0;
  for (const DtiModel* m : models_) n = std::max(n, m->config().window);
  return n;
}

std::vector<double> DtiLatent::latent(const std::deque<advisory::Observation>& history, Rng& rng) {
  const std::vector<advisory::Observation> obs(history.begin(), history.end());
  std::vector<double> out;
  out.reserve(dim());
  for (const DtiModel* m : models_) {
    const Window w = window_from(obs, m->config().window);
    const LatentTrait z = m->infer(w, mode_, rng);
    out.insert(out.end(), z.z.begin(), z.z.end());
  }
  return out;
}

}  // namespace ringlab::dti
